//! Residue alphabet and the per-time design/context state.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{Rotation, Vec3};

pub const NUM_TYPES: usize = 20;

/// The 20 canonical residue types, in alphabetical one-letter order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AminoAcid {
    A,
    C,
    D,
    E,
    F,
    G,
    H,
    I,
    K,
    L,
    M,
    N,
    P,
    Q,
    R,
    S,
    T,
    V,
    W,
    Y,
}

const LETTERS: &[u8; NUM_TYPES] = b"ACDEFGHIKLMNPQRSTVWY";

impl AminoAcid {
    pub const ALL: [AminoAcid; NUM_TYPES] = {
        use AminoAcid::*;
        [A, C, D, E, F, G, H, I, K, L, M, N, P, Q, R, S, T, V, W, Y]
    };

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn letter(self) -> char {
        LETTERS[self.index()] as char
    }

    pub fn from_letter(c: char) -> Result<Self> {
        let up = c.to_ascii_uppercase() as u32;
        LETTERS
            .iter()
            .position(|&l| l as u32 == up)
            .map(|i| Self::ALL[i])
            .ok_or_else(|| Error::Domain(format!("`{c}` is not a canonical residue letter")))
    }

    pub fn parse_sequence(s: &str) -> Result<Vec<Self>> {
        s.chars().map(Self::from_letter).collect()
    }
}

impl fmt::Display for AminoAcid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

pub fn sequence_string(types: &[AminoAcid]) -> String {
    types.iter().map(|a| a.letter()).collect()
}

/// The generated loop at one diffusion time: residue types, C-alpha
/// coordinates and orientations. `t = 0` is a finished design.
#[derive(Debug, Clone, PartialEq)]
pub struct CdrState {
    pub types: Vec<AminoAcid>,
    pub coords: Vec<Vec3>,
    pub orients: Vec<Rotation>,
    pub t: usize,
}

impl CdrState {
    pub fn new(
        types: Vec<AminoAcid>,
        coords: Vec<Vec3>,
        orients: Vec<Rotation>,
        t: usize,
    ) -> Result<Self> {
        let s = Self {
            types,
            coords,
            orients,
            t,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.types.len();
        if m == 0 || self.coords.len() != m || self.orients.len() != m {
            return Err(Error::Shape(format!(
                "state arrays must share a nonzero length (types {}, coords {}, orients {})",
                m,
                self.coords.len(),
                self.orients.len()
            )));
        }
        if let Some(i) = self
            .orients
            .iter()
            .position(|o| !o.is_valid(crate::so3::ROTATION_TOL))
        {
            return Err(Error::Domain(format!("orientation {i} is not a rotation")));
        }
        if self.coords.iter().any(|c| !c.iter().all(|x| x.is_finite())) {
            return Err(Error::Domain("non-finite coordinate".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn sequence(&self) -> String {
        sequence_string(&self.types)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainTag {
    Antigen,
    Heavy,
    Light,
}

/// The fixed remainder of the complex that conditions generation.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexContext {
    pub types: Vec<AminoAcid>,
    pub coords: Vec<Vec3>,
    pub orients: Vec<Rotation>,
    pub chain_tags: Vec<ChainTag>,
    /// `(start, length)` of the generated loop within the full chain.
    pub cdr_span: (usize, usize),
}

impl ComplexContext {
    pub fn new(
        types: Vec<AminoAcid>,
        coords: Vec<Vec3>,
        orients: Vec<Rotation>,
        chain_tags: Vec<ChainTag>,
        cdr_span: (usize, usize),
    ) -> Result<Self> {
        let n = types.len();
        if coords.len() != n || orients.len() != n || chain_tags.len() != n {
            return Err(Error::Shape("context arrays must share a length".into()));
        }
        if cdr_span.1 == 0 {
            return Err(Error::Shape("cdr span must be nonempty".into()));
        }
        Ok(Self {
            types,
            coords,
            orients,
            chain_tags,
            cdr_span,
        })
    }

    pub fn cdr_len(&self) -> usize {
        self.cdr_span.1
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn check_state(&self, state: &CdrState) -> Result<()> {
        if state.len() != self.cdr_len() {
            return Err(Error::Shape(format!(
                "state has {} residues but the context expects a loop of {}",
                state.len(),
                self.cdr_len()
            )));
        }
        Ok(())
    }
}
