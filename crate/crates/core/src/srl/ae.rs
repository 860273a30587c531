use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, Activation, AdamState, InitScheme, Matrix, Mlp};

/// Training settings of [`ae_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct AeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Hidden widths of the encoder; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

/// Encoder/decoder pair trained on standardised inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    pub encoder: Mlp<f64>,
    pub decoder: Mlp<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl AeModel {
    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    fn standardise(&self, x: &Matrix<f64>) -> Matrix<f64> {
        let mut z = x.clone();
        for r in 0..z.rows() {
            for (j, v) in z.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        z
    }

    pub fn encode(&self, x: &Matrix<f64>) -> Result<Matrix<f64>> {
        if x.cols() != self.mean.len() {
            return Err(Error::shape(format!(
                "{}-wide input for a {}-dim encoder",
                x.cols(),
                self.mean.len()
            )));
        }
        self.encoder.predict(&self.standardise(x))
    }

    pub fn reconstruct(&self, x: &Matrix<f64>) -> Result<Matrix<f64>> {
        let mut y = self.decoder.predict(&self.encode(x)?)?;
        for r in 0..y.rows() {
            for (j, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.scale[j] + self.mean[j];
            }
        }
        Ok(y)
    }

    /// Mean squared reconstruction error in original units.
    pub fn mse(&self, x: &Matrix<f64>) -> Result<f64> {
        let y = self.reconstruct(x)?;
        let n = (x.rows() * x.cols()) as f64;
        Ok(x.as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }
}

fn mlp(sizes: &[usize], hidden_act: Activation, rng: &mut impl Rng) -> Result<Mlp<f64>> {
    let mut acts = vec![hidden_act; sizes.len() - 2];
    acts.push(Activation::Linear);
    Mlp::new(sizes, &acts, InitScheme::XavierUniform, rng)
}

/// Trains an auto-encoder `d -> k -> d` by minibatch Adam on the mean squared
/// reconstruction error; returns the model and the last epoch's mean loss.
pub fn ae_fit(
    data: &Matrix<f64>,
    k: usize,
    cfg: &AeConfig,
    rng: &mut impl Rng,
) -> Result<(AeModel, f64)> {
    let (n, d) = data.shape();
    if k == 0 || cfg.batch_size == 0 || n < cfg.batch_size {
        return Err(Error::Invalid(format!(
            "ae_fit needs k >= 1 and n >= batch_size ({n} < {})",
            cfg.batch_size
        )));
    }
    if !data.is_finite() {
        return Err(Error::NonFinite("auto-encoder input".into()));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| data.row_iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = data
                .row_iter()
                .map(|r| (r[j] - mean[j]).powi(2))
                .sum::<f64>()
                / n as f64;
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut enc_sizes = vec![d];
    enc_sizes.extend(&cfg.hidden);
    enc_sizes.push(k);
    let dec_sizes: Vec<usize> = enc_sizes.iter().rev().copied().collect();
    let mut model = AeModel {
        encoder: mlp(&enc_sizes, cfg.activation, rng)?,
        decoder: mlp(&dec_sizes, cfg.activation, rng)?,
        mean,
        scale,
    };
    let x = model.standardise(data);
    let mut enc_opt = AdamState::for_mlp(&model.encoder);
    let mut dec_opt = AdamState::for_mlp(&model.decoder);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut last = f64::NAN;
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in idx.chunks(cfg.batch_size) {
            let xb = x.select_rows(chunk);
            let (z, ecache) = model.encoder.forward(&xb)?;
            let (y, dcache) = model.decoder.forward(&z)?;
            let scale = 1.0 / (xb.rows() * d) as f64;
            let mut dy = Matrix::zeros(y.rows(), d);
            let mut loss = 0.0;
            for ((g, a), b) in dy
                .as_mut_slice()
                .iter_mut()
                .zip(y.as_slice())
                .zip(xb.as_slice())
            {
                loss += (a - b) * (a - b) * scale;
                *g = 2.0 * (a - b) * scale;
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite("auto-encoder loss".into()));
            }
            let (mut dg, dz) = model.decoder.backward_with_input(&dcache, &dy)?;
            let mut eg = model.encoder.backward(&ecache, &dz)?;
            clip_global_norm(&mut [&mut eg, &mut dg], 10.0);
            enc_opt.step_mlp(&mut model.encoder, &eg, cfg.lr)?;
            dec_opt.step_mlp(&mut model.decoder, &dg, cfg.lr)?;
            total += loss;
            batches += 1;
        }
        last = total / batches as f64;
    }
    Ok((model, last))
}
