//! The five update rules compared in the ablation study.
//!
//! | rule     | forward     | gradient scale S            |
//! |----------|-------------|-----------------------------|
//! | A        | m ⊙ w       | m                           |
//! | B        | m ⊙ w       | 1                           |
//! | C        | m ⊙ w       | m + (1 - m) · floor         |
//! | D_noFA   | m ⊙ w       | a                           |
//! | D        | a ⊙ (m ⊙ w) | a                           |
//!
//! `a` is the magnitude attention and `floor = (1 - ratio)^z`. For the
//! attention rules, pruned entries of `a` already equal `floor`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UpdateRule {
    A,
    B,
    C,
    #[serde(rename = "D_noFA")]
    DNoFa,
    #[default]
    D,
}

impl UpdateRule {
    pub const ALL: [UpdateRule; 5] = [Self::A, Self::B, Self::C, Self::DNoFa, Self::D];

    pub fn name(self) -> &'static str {
        match self {
            Self::A => "A",
            Self::B => "B",
            Self::C => "C",
            Self::DNoFa => "D_noFA",
            Self::D => "D",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::A => 0,
            Self::B => 1,
            Self::C => 2,
            Self::DNoFa => 3,
            Self::D => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn forward_attention(self) -> bool {
        self == Self::D
    }
}

impl fmt::Display for UpdateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UpdateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim() {
            "A" | "a" => Ok(Self::A),
            "B" | "b" => Ok(Self::B),
            "C" | "c" => Ok(Self::C),
            "D_noFA" | "d_nofa" | "D-noFA" | "DnoFA" => Ok(Self::DNoFa),
            "D" | "d" => Ok(Self::D),
            other => Err(Error::Config(format!("unknown update rule `{other}`"))),
        }
    }
}

/// Weights seen by the forward pass.
pub fn forward_effective<T: Scalar>(w: &[T], m: &[u8], a: &[T], rule: UpdateRule, out: &mut [T]) {
    debug_assert!(w.len() == m.len() && w.len() == a.len() && w.len() == out.len());
    if rule.forward_attention() {
        for (((o, &wi), &mi), &ai) in out.iter_mut().zip(w).zip(m).zip(a) {
            *o = ai * (mask_value::<T>(mi) * wi);
        }
    } else {
        for ((o, &wi), &mi) in out.iter_mut().zip(w).zip(m) {
            *o = mask_value::<T>(mi) * wi;
        }
    }
}

/// Per-weight factor applied to ∂L/∂(effective weight) before the optimizer.
pub fn backward_scale<T: Scalar>(m: &[u8], a: &[T], floor: T, rule: UpdateRule, out: &mut [T]) {
    debug_assert!(m.len() == a.len() && m.len() == out.len());
    match rule {
        UpdateRule::A => {
            for (o, &mi) in out.iter_mut().zip(m) {
                *o = mask_value(mi);
            }
        }
        UpdateRule::B => out.iter_mut().for_each(|o| *o = T::one()),
        UpdateRule::C => {
            for (o, &mi) in out.iter_mut().zip(m) {
                *o = if mi != 0 { T::one() } else { floor };
            }
        }
        UpdateRule::DNoFa | UpdateRule::D => out.copy_from_slice(a),
    }
}

#[inline]
pub(crate) fn mask_value<T: Scalar>(m: u8) -> T {
    if m != 0 {
        T::one()
    } else {
        T::zero()
    }
}
