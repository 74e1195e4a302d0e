//! Encoder pretraining objectives and the training driver.
//!
//! Every objective reads the encoder's global vector `G` and, where needed,
//! the local map `L` at the spec's local tap. Optional auxiliary heads
//! classify every local cell (`AC` against binarised attributes, `LC` against
//! labels) and their loss is added to the main one.

mod augment;
mod heads;
mod infomax;
mod losses;
mod pairing;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment_view, AugmentConfig};
pub use heads::{Decoder, InfomaxProjectors};
pub use infomax::{dv_bound, infomax_loss, nce_bound, score_tensor, InfomaxTerms};
pub use losses::{
    aae_losses, binarize_for_ac, kl_standard_normal, local_aux_loss, reconstruction_loss, supervised_loss,
    vae_loss, AaeLosses, LocalTarget, VaeLosses,
};
pub use pairing::{cmdim_pairing, dim_pairing, PairingPlan};
pub use trainer::{pn_end_to_end, train_encoder, LossLog, TrainConfig, TrainedEncoder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Fc,
    Vae,
    Bvae,
    Aae,
    Dim,
    Amdim,
    Cmdim,
    Pn,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 8] = [
        ObjectiveKind::Fc,
        ObjectiveKind::Vae,
        ObjectiveKind::Bvae,
        ObjectiveKind::Aae,
        ObjectiveKind::Dim,
        ObjectiveKind::Amdim,
        ObjectiveKind::Cmdim,
        ObjectiveKind::Pn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::Fc => "fc",
            ObjectiveKind::Vae => "vae",
            ObjectiveKind::Bvae => "bvae",
            ObjectiveKind::Aae => "aae",
            ObjectiveKind::Dim => "dim",
            ObjectiveKind::Amdim => "amdim",
            ObjectiveKind::Cmdim => "cmdim",
            ObjectiveKind::Pn => "pn",
        }
    }

    pub fn is_infomax(self) -> bool {
        matches!(self, ObjectiveKind::Dim | ObjectiveKind::Amdim | ObjectiveKind::Cmdim)
    }

    pub fn uses_decoder(self) -> bool {
        matches!(self, ObjectiveKind::Vae | ObjectiveKind::Bvae | ObjectiveKind::Aae)
    }
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s || (s == "beta-vae" && *k == ObjectiveKind::Bvae))
            .ok_or_else(|| Error::Config(format!("unknown objective `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalLoss {
    None,
    Ac,
    Lc,
}

impl LocalLoss {
    pub fn as_str(self) -> &'static str {
        match self {
            LocalLoss::None => "none",
            LocalLoss::Ac => "ac",
            LocalLoss::Lc => "lc",
        }
    }

    /// Column label used in result tables.
    pub fn table_name(self) -> &'static str {
        match self {
            LocalLoss::None => "Normal",
            LocalLoss::Ac => "AC",
            LocalLoss::Lc => "LC",
        }
    }
}

impl std::fmt::Display for LocalLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LocalLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "normal" => Ok(LocalLoss::None),
            "ac" => Ok(LocalLoss::Ac),
            "lc" => Ok(LocalLoss::Lc),
            other => Err(Error::Config(format!("unknown local loss `{other}`"))),
        }
    }
}

/// Mutual-information bound used by the infomax objectives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Donsker-Varadhan: `E_joint[T] - log E_marg[exp T]`.
    Dv,
    /// Contrastive softmax of each positive against its negatives.
    Nce,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Dv => "dv",
            Estimator::Nce => "nce",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// KL weight; forced to 1 for `Vae`.
    pub beta: f64,
    /// Probability of an intra-class positive (CMDIM only).
    pub match_prob: f64,
    pub local_loss: LocalLoss,
    pub local_loss_weight: f64,
    /// `None` picks the objective's default bound.
    pub estimator: Option<Estimator>,
    /// Attributes are mean-centred over train classes and compared to this.
    pub ac_threshold: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            kind: ObjectiveKind::Fc,
            beta: 4.0,
            match_prob: 1.0,
            local_loss: LocalLoss::None,
            local_loss_weight: 1.0,
            estimator: None,
            ac_threshold: 0.0,
        }
    }
}

impl ObjectiveConfig {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    pub fn with_local(mut self, local: LocalLoss) -> Self {
        self.local_loss = local;
        self
    }

    pub fn with_match_prob(mut self, p: f64) -> Self {
        self.match_prob = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.match_prob) {
            return Err(Error::Config(format!("match probability {} outside [0, 1]", self.match_prob)));
        }
        if self.local_loss != LocalLoss::None && !(self.local_loss_weight > 0.0) {
            return Err(Error::Config("local loss weight must be positive".into()));
        }
        Ok(())
    }

    pub fn effective_beta(&self) -> f64 {
        match self.kind {
            ObjectiveKind::Vae => 1.0,
            _ => self.beta,
        }
    }

    pub fn effective_estimator(&self) -> Estimator {
        self.estimator.unwrap_or(match self.kind {
            ObjectiveKind::Amdim => Estimator::Nce,
            _ => Estimator::Dv,
        })
    }

    /// Identifier without the local loss, such as `cmdim-p0.5`.
    pub fn model_label(&self) -> String {
        let mut s = self.kind.as_str().to_string();
        if self.kind == ObjectiveKind::Cmdim {
            s.push_str(&format!("-p{}", self.match_prob));
        }
        if self.kind == ObjectiveKind::Bvae {
            s.push_str(&format!("-b{}", self.beta));
        }
        s
    }

    /// Row name in result tables, such as `CMDIM (p=0.5)`.
    pub fn table_name(&self) -> String {
        match self.kind {
            ObjectiveKind::Fc => "FC".into(),
            ObjectiveKind::Vae => "VAE".into(),
            ObjectiveKind::Bvae => "beta-VAE".into(),
            ObjectiveKind::Aae => "AAE".into(),
            ObjectiveKind::Dim => "DIM".into(),
            ObjectiveKind::Amdim => "AMDIM".into(),
            ObjectiveKind::Cmdim => format!("CMDIM (p={})", self.match_prob),
            ObjectiveKind::Pn => "PN".into(),
        }
    }

    /// Inverse of [`label`](Self::label): `cmdim`, `cmdim-p0.5`, `bvae-b4`,
    /// `fc+ac` and so on. Unspecified settings keep their defaults.
    pub fn from_label(label: &str) -> Result<Self> {
        let (model, local) = match label.split_once('+') {
            Some((m, l)) => (m, l.parse()?),
            None => (label, LocalLoss::None),
        };
        let (kind, arg) = match model.split_once('-') {
            Some((k, a)) if k != "beta" => (k, Some(a)),
            _ => (model, None),
        };
        let mut cfg = Self::new(kind.parse()?).with_local(local);
        if let Some(a) = arg {
            let value = |prefix: char| {
                a.strip_prefix(prefix)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("bad objective setting `{a}` in `{label}`")))
            };
            match cfg.kind {
                ObjectiveKind::Cmdim => cfg.match_prob = value('p')?,
                ObjectiveKind::Bvae => cfg.beta = value('b')?,
                _ => return Err(Error::Config(format!("`{kind}` takes no setting, got `{label}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Short identifier such as `cmdim-p0.5+ac`.
    pub fn label(&self) -> String {
        let mut s = self.model_label();
        if self.local_loss != LocalLoss::None {
            s.push('+');
            s.push_str(self.local_loss.as_str());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in ObjectiveKind::ALL {
            assert_eq!(k.as_str().parse::<ObjectiveKind>().unwrap(), k);
        }
        assert!("gan".parse::<ObjectiveKind>().is_err());
        assert_eq!("Normal".parse::<LocalLoss>().unwrap(), LocalLoss::None);
    }

    #[test]
    fn labels_parse_back() {
        let cases = [
            ObjectiveConfig::new(ObjectiveKind::Cmdim).with_match_prob(0.5).with_local(LocalLoss::Ac),
            ObjectiveConfig::new(ObjectiveKind::Fc),
            ObjectiveConfig::new(ObjectiveKind::Pn).with_local(LocalLoss::Lc),
            ObjectiveConfig::new(ObjectiveKind::Bvae),
        ];
        for c in cases {
            assert_eq!(ObjectiveConfig::from_label(&c.label()).unwrap(), c);
        }
        assert_eq!(ObjectiveConfig::from_label("cmdim").unwrap().match_prob, 1.0);
        assert_eq!(ObjectiveConfig::from_label("beta-vae").unwrap().kind, ObjectiveKind::Bvae);
        assert!(ObjectiveConfig::from_label("fc-p0.5").is_err());
        assert!(ObjectiveConfig::from_label("cmdim-p2").is_err());
        assert!(ObjectiveConfig::from_label("dim+xx").is_err());
    }

    #[test]
    fn validation() {
        assert!(ObjectiveConfig::new(ObjectiveKind::Cmdim).with_match_prob(1.5).validate().is_err());
        let mut c = ObjectiveConfig::new(ObjectiveKind::Fc).with_local(LocalLoss::Ac);
        c.local_loss_weight = 0.0;
        assert!(c.validate().is_err());
        c.local_loss = LocalLoss::None;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn defaults_per_objective() {
        assert_eq!(ObjectiveConfig::new(ObjectiveKind::Amdim).effective_estimator(), Estimator::Nce);
        assert_eq!(ObjectiveConfig::new(ObjectiveKind::Cmdim).effective_estimator(), Estimator::Dv);
        assert_eq!(ObjectiveConfig::new(ObjectiveKind::Vae).effective_beta(), 1.0);
        assert_eq!(ObjectiveConfig::new(ObjectiveKind::Bvae).effective_beta(), 4.0);
    }
}
