//! Published fitted constants for the FineWeb weight-decay studies and the
//! C4 deduplicated refit. These are used as inputs (for allocation and
//! crossover reproduction) and as ground truth for synthetic recovery.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::laws::{ChinchillaParams, LawKind, LawSpec, RepetitionLaw};

/// Standard weight decay (lambda = 0.1), single-epoch base.
pub const STD_BASE: ChinchillaParams =
    ChinchillaParams { e: 1.8383, a: 216.58, alpha: 0.2999, b: 4964.42, beta: 0.4274 };

/// Strong weight decay (lambda = 1.0), single-epoch base.
pub const WD_BASE: ChinchillaParams =
    ChinchillaParams { e: 2.0422, a: 214.64, alpha: 0.2922, b: 29370.43, beta: 0.5333 };

/// Base refit on the C4 deduplicated public sweep.
pub const C4_BASE: ChinchillaParams =
    ChinchillaParams { e: 1.9031, a: 432.63, alpha: 0.3362, b: 5360.24, beta: 0.3868 };

pub const STD_EXP_DECAY: RepetitionLaw = RepetitionLaw::ExpDecayData { r_star_d: 7.756 };
pub const STD_EFF_PARAM: RepetitionLaw =
    RepetitionLaw::EffectiveParam { r_star_d: 7.765, r_star_n: 9593.0 };
pub const STD_ADD1: RepetitionLaw = RepetitionLaw::AddPenalty1 { p: 0.02305 };
pub const STD_ADD2: RepetitionLaw = RepetitionLaw::AddPenalty2 { p: 0.02186, kappa: 1.051 };
pub const STD_ADD4: RepetitionLaw =
    RepetitionLaw::AddPenalty4 { p: 3.27e-7, delta: 1.674, kappa: 1.345, gamma: 0.635 };

pub const WD_EXP_DECAY: RepetitionLaw = RepetitionLaw::ExpDecayData { r_star_d: 12.731 };
pub const WD_EFF_PARAM: RepetitionLaw =
    RepetitionLaw::EffectiveParam { r_star_d: 13.749, r_star_n: 1_706_066.0 };
pub const WD_ADD1: RepetitionLaw = RepetitionLaw::AddPenalty1 { p: 0.00681 };
pub const WD_ADD2: RepetitionLaw = RepetitionLaw::AddPenalty2 { p: 0.00569, kappa: 1.350 };
pub const WD_ADD4: RepetitionLaw =
    RepetitionLaw::AddPenalty4 { p: 0.00257, delta: 1.563, kappa: 1.391, gamma: 1.024 };

pub const C4_EXP_DECAY: RepetitionLaw = RepetitionLaw::ExpDecayData { r_star_d: 23.82 };
pub const C4_EFF_PARAM: RepetitionLaw =
    RepetitionLaw::EffectiveParam { r_star_d: 38.71, r_star_n: 288.1 };
pub const C4_ADD1: RepetitionLaw = RepetitionLaw::AddPenalty1 { p: 0.002857 };
pub const C4_ADD2: RepetitionLaw = RepetitionLaw::AddPenalty2 { p: 0.006670, kappa: 0.582 };
pub const C4_ADD4: RepetitionLaw =
    RepetitionLaw::AddPenalty4 { p: 2.48e-6, delta: 1.040, kappa: 0.803, gamma: 0.526 };

/// Four-parameter penalty law for standard weight decay.
pub fn std_add4() -> LawSpec {
    LawSpec { base: STD_BASE, rep: STD_ADD4 }
}

/// Four-parameter penalty law for strong weight decay.
pub fn wd_add4() -> LawSpec {
    LawSpec { base: WD_BASE, rep: WD_ADD4 }
}

/// Which published fit to take constants from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Setting {
    /// lambda = 0.1
    Standard,
    /// lambda = 1.0
    WeightDecay,
    C4,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Standard, Setting::WeightDecay, Setting::C4];

    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::Standard => "std",
            Setting::WeightDecay => "wd",
            Setting::C4 => "c4",
        }
    }

    pub fn base(&self) -> ChinchillaParams {
        match self {
            Setting::Standard => STD_BASE,
            Setting::WeightDecay => WD_BASE,
            Setting::C4 => C4_BASE,
        }
    }

    pub fn law(&self, kind: LawKind) -> LawSpec {
        use LawKind::*;
        let rep = match (self, kind) {
            (_, Chinchilla) => RepetitionLaw::None,
            (Setting::Standard, ExpDecay) => STD_EXP_DECAY,
            (Setting::Standard, EffParam) => STD_EFF_PARAM,
            (Setting::Standard, Add1) => STD_ADD1,
            (Setting::Standard, Add2) => STD_ADD2,
            (Setting::Standard, Add4) => STD_ADD4,
            (Setting::WeightDecay, ExpDecay) => WD_EXP_DECAY,
            (Setting::WeightDecay, EffParam) => WD_EFF_PARAM,
            (Setting::WeightDecay, Add1) => WD_ADD1,
            (Setting::WeightDecay, Add2) => WD_ADD2,
            (Setting::WeightDecay, Add4) => WD_ADD4,
            (Setting::C4, ExpDecay) => C4_EXP_DECAY,
            (Setting::C4, EffParam) => C4_EFF_PARAM,
            (Setting::C4, Add1) => C4_ADD1,
            (Setting::C4, Add2) => C4_ADD2,
            (Setting::C4, Add4) => C4_ADD4,
        };
        LawSpec { base: self.base(), rep }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Unknown { kind: "setting", name: s.to_string() })
    }
}
