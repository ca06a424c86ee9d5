//! Sequence recovery and coordinate deviation against a reference loop.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::CdrState;

fn check_lengths(a: &CdrState, b: &CdrState) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "loop lengths {} and {} differ or are empty",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Fraction of positions with identical residue type.
pub fn aar(gen: &CdrState, reference: &CdrState) -> Result<f64> {
    check_lengths(gen, reference)?;
    let same = gen
        .types
        .iter()
        .zip(&reference.types)
        .filter(|(a, b)| a == b)
        .count();
    Ok(same as f64 / gen.len() as f64)
}

/// Root-mean-square C-alpha distance in the shared framework frame; no
/// superposition is applied.
pub fn rmsd(gen: &CdrState, reference: &CdrState) -> Result<f64> {
    check_lengths(gen, reference)?;
    let ss: f64 = gen
        .coords
        .iter()
        .zip(&reference.coords)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok((ss / gen.len() as f64).sqrt())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub aar: Option<f64>,
    pub rmsd: Option<f64>,
    /// Always false: RMSD is computed without alignment.
    pub superposed: bool,
    pub rewards: BTreeMap<String, f64>,
    pub queries_used: u64,
}

impl DesignReport {
    pub fn with_reference(mut self, gen: &CdrState, reference: Option<&CdrState>) -> Result<Self> {
        if let Some(r) = reference {
            self.aar = Some(aar(gen, r)?);
            self.rmsd = Some(rmsd(gen, r)?);
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{Rotation, Vec3};
    use crate::state::AminoAcid;

    fn state(seq: &str) -> CdrState {
        let types = AminoAcid::parse_sequence(seq).unwrap();
        let m = types.len();
        let coords = (0..m).map(|i| Vec3::new(i as f64, 0.5, -1.0)).collect();
        CdrState::new(types, coords, vec![Rotation::identity(); m], 0).unwrap()
    }

    #[test]
    fn aar_cases() {
        assert_eq!(aar(&state("ACD"), &state("ACD")).unwrap(), 1.0);
        assert_eq!(aar(&state("ACD"), &state("EFG")).unwrap(), 0.0);
        assert_eq!(aar(&state("ACD"), &state("ACE")).unwrap(), 2.0 / 3.0);
        assert!(aar(&state("AC"), &state("ACE")).is_err());
    }

    #[test]
    fn rmsd_cases() {
        let a = state("ACDEFG");
        assert_eq!(rmsd(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.coords[4] += Vec3::new(3.0, 0.0, 0.0);
        assert!((rmsd(&a, &b).unwrap() - (9.0f64 / 6.0).sqrt()).abs() < 1e-12);
        let mut c = a.clone();
        c.coords
            .iter_mut()
            .for_each(|x| *x += Vec3::new(1.0, 0.0, 0.0));
        assert!((rmsd(&c, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}
