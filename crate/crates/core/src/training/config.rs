use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::losses::LossWeights;

/// Which terms of the objective are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationMode {
    #[default]
    Full,
    /// No distillation (`λ₁ = 0`); no teacher is trained.
    NoIntern,
    /// No correlation alignment (`λ₂ = 0`).
    NoMutual,
    /// No exploration term (`λ₃ = 0`).
    NoExp,
    /// Plain classifier on raw inputs.
    Erm,
    /// Plain classifier on Fourier-phase inputs.
    PhaseOnly,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::Full,
        AblationMode::NoIntern,
        AblationMode::NoMutual,
        AblationMode::NoExp,
        AblationMode::Erm,
        AblationMode::PhaseOnly,
    ];

    /// The five arms of the ablation grid.
    pub const GRID: [AblationMode; 5] = [
        AblationMode::Erm,
        AblationMode::NoIntern,
        AblationMode::NoMutual,
        AblationMode::NoExp,
        AblationMode::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoIntern => "no-intern",
            AblationMode::NoMutual => "no-mutual",
            AblationMode::NoExp => "no-exp",
            AblationMode::Erm => "erm",
            AblationMode::PhaseOnly => "phase-only",
        }
    }

    /// Loss weights after zeroing the terms this mode disables.
    pub fn weights(self, base: LossWeights) -> LossWeights {
        let mut w = base;
        match self {
            AblationMode::Full => {}
            AblationMode::NoIntern => w.lambda1 = 0.0,
            AblationMode::NoMutual => w.lambda2 = 0.0,
            AblationMode::NoExp => w.lambda3 = 0.0,
            AblationMode::Erm | AblationMode::PhaseOnly => {
                w.lambda1 = 0.0;
                w.lambda2 = 0.0;
                w.lambda3 = 0.0;
            }
        }
        w
    }

    pub fn needs_teacher(self, base: LossWeights) -> bool {
        self.weights(base).lambda1 > 0.0
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AblationMode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            let valid: Vec<_> = AblationMode::ALL.iter().map(|m| m.as_str()).collect();
            format!("unknown mode `{s}`; valid modes: {}", valid.join(", "))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub val_fraction: f64,
    /// Random pseudo-domain count used when only one source domain is given.
    pub virtual_domains: Option<usize>,
    pub mode: AblationMode,
    pub hidden: usize,
    /// Student feature width `d` (even).
    pub features: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 5e-4,
            weights: LossWeights::default(),
            seed: 0,
            val_fraction: 0.2,
            virtual_domains: None,
            mode: AblationMode::Full,
            hidden: 64,
            features: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad("weight_decay must be >= 0");
        }
        if self.virtual_domains.is_some_and(|k| k < 2) {
            return bad("virtual_domains must be >= 2");
        }
        if self.hidden == 0 || self.features < 2 || !self.features.is_multiple_of(2) {
            return bad("hidden must be positive and features even and >= 2");
        }
        self.weights.validate()?;
        Ok(())
    }

    pub fn effective_weights(&self) -> LossWeights {
        self.mode.weights(self.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in AblationMode::ALL {
            assert_eq!(m.as_str().parse::<AblationMode>().unwrap(), m);
        }
        let err = "bogus".parse::<AblationMode>().unwrap_err();
        assert!(err.contains("no-intern") && err.contains("phase-only"));
    }

    #[test]
    fn modes_zero_their_terms() {
        let w = LossWeights::default();
        assert_eq!(AblationMode::Full.weights(w), w);
        assert_eq!(AblationMode::NoIntern.weights(w).lambda1, 0.0);
        assert_eq!(AblationMode::NoMutual.weights(w).lambda2, 0.0);
        assert_eq!(AblationMode::NoExp.weights(w).lambda3, 0.0);
        let erm = AblationMode::Erm.weights(w);
        assert_eq!((erm.lambda1, erm.lambda2, erm.lambda3), (0.0, 0.0, 0.0));
        assert!(!AblationMode::NoIntern.needs_teacher(w));
        assert!(AblationMode::NoExp.needs_teacher(w));
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
        assert!(TrainConfig::default().validate().is_ok());
    }
}
