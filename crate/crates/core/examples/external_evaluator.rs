//! Drive a child-process evaluator over the line-delimited JSON protocol.
//!
//! This example is its own evaluator: started with `--serve MODE` it answers
//! requests on stdin, otherwise it spawns copies of itself in several modes.
//!
//! cargo run --release --example external_evaluator

use std::io::{self, BufReader};
use std::time::Duration;

use cdr_codesign::evaluators::external::{protocol_round_trip, serve_echo};
use cdr_codesign::evaluators::{EchoMode, Evaluator, ExternalConfig, ExternalEvaluator};
use cdr_codesign::task::SyntheticTask;
use cdr_codesign::Result;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() == 3 && args[1] == "--serve" {
        let mode: EchoMode = args[2].parse().map_err(cdr_codesign::Error::Config)?;
        serve_echo(
            mode,
            BufReader::new(io::stdin().lock()),
            io::stdout().lock(),
        )?;
        return Ok(());
    }

    let me = std::env::current_exe()?.display().to_string();
    let spawn = |mode: &str| {
        let cfg = ExternalConfig::new(
            format!("echo-{mode}"),
            me.clone(),
            vec!["--serve".into(), mode.into()],
        )
        .with_timeout(Duration::from_millis(500));
        ExternalEvaluator::spawn(cfg)
    };
    let design = SyntheticTask::default().target()?;

    let echo = spawn("echo")?;
    let report = protocol_round_trip(&echo, &design, 1000);
    println!(
        "echo: {} of {} ok, errors {:?}",
        report.ok, report.requests, report.errors
    );

    let length = spawn("length")?;
    println!(
        "length: reward {} for a loop of {}",
        length.evaluate(&design)?,
        design.len()
    );

    for mode in ["sleep:2000", "garbage", "badid", "error", "exit"] {
        let ev = spawn(mode)?;
        match ev.evaluate(&design) {
            Ok(r) => println!("{mode}: unexpected reward {r}"),
            Err(e) => println!("{mode}: {} error: {e}", e.kind()),
        }
    }
    Ok(())
}
