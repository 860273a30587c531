//! State representation learning: observations gathered during a warmup
//! phase fit a PCA or auto-encoder whose latent codes then feed the agent.

mod ae;
mod pca;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use ae::{ae_fit, AeConfig, AeModel};
pub use pca::{covariance, pca_fit, pca_fit_threshold, smallest_dim, symmetric_eigen, PcaModel};

use crate::agents::activation_from_name;
use crate::config::{Factory, ParamTree};
use crate::error::{Error, Result};
use crate::nn::io::write_mlp;
use crate::nn::{Activation, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Active,
}

/// Observation collection before the representation is fitted.
#[derive(Debug, Clone)]
pub struct SrlState {
    phase: Phase,
    collected: Vec<Vec<f64>>,
    target: usize,
}

impl SrlState {
    pub fn new(warmup_samples: usize) -> Self {
        let phase = if warmup_samples == 0 {
            Phase::Active
        } else {
            Phase::Warmup
        };
        Self {
            phase,
            collected: Vec::new(),
            target: warmup_samples,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn collected(&self) -> usize {
        self.collected.len()
    }

    /// Appends observation rows; the phase turns active once the target is reached.
    pub fn observe(&mut self, rows: &Matrix<f64>) -> Result<Phase> {
        if self.phase == Phase::Active {
            return Err(Error::Invalid("srl warmup already complete".into()));
        }
        self.collected.extend(rows.row_iter().map(<[f64]>::to_vec));
        if self.collected.len() >= self.target {
            self.phase = Phase::Active;
        }
        Ok(self.phase)
    }

    pub fn data(&self) -> Result<Matrix<f64>> {
        Matrix::from_rows(&self.collected)
    }
}

/// A fitted representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    Pca(PcaModel<f64>),
    Ae(AeModel),
}

impl Representation {
    pub fn latent_dim(&self) -> usize {
        match self {
            Representation::Pca(m) => m.latent_dim(),
            Representation::Ae(m) => m.latent_dim(),
        }
    }

    pub fn transform(&self, obs: &Matrix<f64>) -> Result<Matrix<f64>> {
        match self {
            Representation::Pca(m) => m.transform_batch(obs),
            Representation::Ae(m) => m.encode(obs),
        }
    }

    /// Saves the model under `stem` with a `.dkpc` or `_enc/_dec.dknn` suffix.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let create = |suffix: &str| {
            let path = stem.with_file_name(format!(
                "{}{suffix}",
                stem.file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            ));
            std::fs::File::create(&path)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::io(&path, e))
        };
        let io = |e: std::io::Error| Error::io(stem, e);
        match self {
            Representation::Pca(m) => m.write(create(".dkpc")?).map_err(io),
            Representation::Ae(m) => {
                write_mlp(&m.encoder, create("_enc.dknn")?).map_err(io)?;
                write_mlp(&m.decoder, create("_dec.dknn")?).map_err(io)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrlKind {
    Pca,
    Ae,
}

/// Representation learner built from the `srl` section, fitted once.
#[derive(Debug, Clone)]
pub struct SrlModule {
    pub kind: SrlKind,
    pub latent_dim: Option<usize>,
    pub ev_threshold: Option<f64>,
    pub warmup_samples: usize,
    pub ae: AeConfig,
}

impl SrlModule {
    pub fn from_params(kind: SrlKind, p: &ParamTree) -> Result<Self> {
        let latent_dim = p.opt_usize("latent_dim")?;
        let ev_threshold = p.opt_f64("ev_threshold")?;
        if latent_dim.is_none() && ev_threshold.is_none() {
            return Err(Error::Invalid(
                "srl needs latent_dim or ev_threshold".into(),
            ));
        }
        if ev_threshold.is_some() && kind != SrlKind::Pca {
            return Err(Error::Invalid("ev_threshold applies to pca only".into()));
        }
        let activation = match p.lookup("activation") {
            Some(_) => activation_from_name(&p.str("activation")?)?,
            None => Activation::Tanh,
        };
        Ok(Self {
            kind,
            latent_dim,
            ev_threshold,
            warmup_samples: p.opt_usize("warmup_samples")?.unwrap_or(1000),
            ae: AeConfig {
                epochs: p.opt_usize("epochs")?.unwrap_or(50),
                batch_size: p.opt_usize("batch_size")?.unwrap_or(64),
                lr: p.opt_f64("lr")?.unwrap_or(1e-3),
                hidden: match p.lookup("layers") {
                    Some(_) => p.usize_list("layers")?,
                    None => vec![64],
                },
                activation,
            },
        })
    }

    pub fn fit(&self, data: &Matrix<f64>, seed: u64) -> Result<Representation> {
        match self.kind {
            SrlKind::Pca => Ok(Representation::Pca(
                match (self.latent_dim, self.ev_threshold) {
                    (Some(k), _) => pca_fit(data, k)?,
                    (None, Some(t)) => pca_fit_threshold(data, t)?,
                    (None, None) => unreachable!("checked at construction"),
                },
            )),
            SrlKind::Ae => {
                let k = self.latent_dim.expect("checked at construction");
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok(Representation::Ae(ae_fit(data, k, &self.ae, &mut rng)?.0))
            }
        }
    }
}

pub fn srl_factory() -> Factory<SrlModule, ()> {
    let mut f = Factory::new("srl");
    f.register("pca", |p, _| SrlModule::from_params(SrlKind::Pca, p));
    f.register("ae", |p, _| SrlModule::from_params(SrlKind::Ae, p));
    f
}
