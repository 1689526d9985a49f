//! Conditional denoising network: linear encoder shared by state and
//! condition, a one-hidden-layer tanh MLP over `[z, c_hat, time]`, and a
//! linear decoder back to relation-vector space.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{xavier_uniform, Matrix, Tape, Var};

pub const TIME_EMBED_DIM: usize = 10;

/// Sinusoidal embedding of the integer step `t`.
pub fn time_embedding(t: usize) -> [f64; TIME_EMBED_DIM] {
    let mut out = [0.0; TIME_EMBED_DIM];
    for i in 0..TIME_EMBED_DIM / 2 {
        let freq = 10000f64.powf((2 * i) as f64 / TIME_EMBED_DIM as f64);
        let arg = t as f64 / freq;
        out[2 * i] = arg.sin();
        out[2 * i + 1] = arg.cos();
    }
    out
}

/// `b x 10` embedding matrix for a batch of steps.
pub fn time_embeddings(steps: &[usize]) -> Matrix {
    let mut m = Matrix::zeros(steps.len(), TIME_EMBED_DIM);
    for (r, &t) in steps.iter().enumerate() {
        m.row_mut(r).copy_from_slice(&time_embedding(t));
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct CdNet {
    num_items: usize,
    /// `k_d x |I|`; absent in the codec-free variant.
    pub encoder: Option<Matrix>,
    /// `|I| x k_d`.
    pub decoder: Option<Matrix>,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Tape handles for one registration of a [`CdNet`].
#[derive(Clone, Copy, Debug)]
pub struct CdNetVars {
    pub encoder: Option<Var>,
    pub decoder: Option<Var>,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl CdNetVars {
    /// In the same order as [`CdNet::params_mut`].
    pub fn all(&self) -> Vec<Var> {
        let mut v = Vec::with_capacity(6);
        v.extend(self.encoder);
        v.extend(self.decoder);
        v.extend([self.w1, self.b1, self.w2, self.b2]);
        v
    }
}

impl CdNet {
    /// `latent_dim = None` builds the variant without encoder and decoder,
    /// whose MLP works directly on `|I|`-dimensional vectors.
    pub fn new<R: Rng + ?Sized>(num_items: usize, latent_dim: Option<usize>, rng: &mut R) -> Result<Self> {
        if num_items == 0 || latent_dim == Some(0) {
            return Err(Error::Config(
                "CD-Net needs at least one item and a positive latent size".into(),
            ));
        }
        let width = latent_dim.unwrap_or(num_items);
        let (encoder, decoder) = match latent_dim {
            Some(kd) => (
                Some(xavier_uniform(kd, num_items, rng)),
                Some(xavier_uniform(num_items, kd, rng)),
            ),
            None => (None, None),
        };
        Ok(CdNet {
            num_items,
            encoder,
            decoder,
            w1: xavier_uniform(2 * width + TIME_EMBED_DIM, width, rng),
            b1: Matrix::zeros(1, width),
            w2: xavier_uniform(width, width, rng),
            b2: Matrix::zeros(1, width),
        })
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn latent_dim(&self) -> Option<usize> {
        self.encoder.as_ref().map(Matrix::rows)
    }

    pub fn has_codec(&self) -> bool {
        self.encoder.is_some()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut v: Vec<&Matrix> = Vec::with_capacity(6);
        v.extend(self.encoder.as_ref());
        v.extend(self.decoder.as_ref());
        v.extend([&self.w1, &self.b1, &self.w2, &self.b2]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v: Vec<&mut Matrix> = Vec::with_capacity(6);
        v.extend(self.encoder.as_mut());
        v.extend(self.decoder.as_mut());
        v.extend([&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]);
        v
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.params().iter().map(|m| m.shape()).collect()
    }

    /// Named parameter list for checkpoints.
    pub fn named_params(&self) -> Vec<(&'static str, &Matrix)> {
        let mut v = Vec::with_capacity(6);
        if let (Some(e), Some(d)) = (&self.encoder, &self.decoder) {
            v.push(("encoder", e));
            v.push(("decoder", d));
        }
        v.extend([("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]);
        v
    }

    /// Rebuilds a network from [`CdNet::named_params`] output, checking shapes.
    pub fn from_named(num_items: usize, mut get: impl FnMut(&str) -> Option<Matrix>) -> Result<Self> {
        let encoder = get("encoder");
        let decoder = get("decoder");
        let mut need =
            |name: &str| get(name).ok_or_else(|| Error::ArtifactMismatch(format!("CD-Net parameter `{name}` missing")));
        let net = CdNet {
            num_items,
            encoder,
            decoder,
            w1: need("w1")?,
            b1: need("b1")?,
            w2: need("w2")?,
            b2: need("b2")?,
        };
        net.check_shapes()?;
        Ok(net)
    }

    fn check_shapes(&self) -> Result<()> {
        let width = self.latent_dim().unwrap_or(self.num_items);
        let n = self.num_items;
        let mut ok = self.encoder.is_some() == self.decoder.is_some();
        if let (Some(e), Some(d)) = (&self.encoder, &self.decoder) {
            ok &= e.shape() == (width, n) && d.shape() == (n, width);
        }
        ok &= self.w1.shape() == (2 * width + TIME_EMBED_DIM, width)
            && self.b1.shape() == (1, width)
            && self.w2.shape() == (width, width)
            && self.b2.shape() == (1, width);
        if ok {
            Ok(())
        } else {
            Err(Error::ArtifactMismatch(format!(
                "CD-Net parameter shapes do not match {n} items"
            )))
        }
    }

    /// Puts the parameters on `tape`, trainable or frozen.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> CdNetVars {
        let mut leaf = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        CdNetVars {
            encoder: self.encoder.as_ref().map(&mut leaf),
            decoder: self.decoder.as_ref().map(&mut leaf),
            w1: leaf(&self.w1),
            b1: leaf(&self.b1),
            w2: leaf(&self.w2),
            b2: leaf(&self.b2),
        }
    }

    /// Predicted clean vectors for a batch: `x` and `c` are `b x |I|` (one
    /// relation vector per row) and `temb` is `b x 10`.
    pub fn forward(tape: &mut Tape, vars: &CdNetVars, x: Var, c: Var, temb: Var) -> Result<Var> {
        let (z, ch) = match vars.encoder {
            Some(e) => {
                let et = tape.transpose(e);
                (tape.matmul(x, et)?, tape.matmul(c, et)?)
            }
            None => (x, c),
        };
        let input = tape.concat_cols(&[z, ch, temb])?;
        let h = tape.matmul(input, vars.w1)?;
        let h = tape.add_row(h, vars.b1)?;
        let h = tape.tanh(h);
        let out = tape.matmul(h, vars.w2)?;
        let out = tape.add_row(out, vars.b2)?;
        match vars.decoder {
            Some(d) => {
                let dt = tape.transpose(d);
                tape.matmul(out, dt)
            }
            None => Ok(out),
        }
    }

    fn check_batch(&self, x: &Matrix, c: &Matrix, steps: &[usize]) -> Result<()> {
        if x.cols() != self.num_items || x.shape() != c.shape() {
            return Err(Error::dim("cdnet_predict", x.shape(), c.shape()));
        }
        if steps.len() != x.rows() {
            return Err(Error::Contract(format!(
                "{} steps for {} relation vectors",
                steps.len(),
                x.rows()
            )));
        }
        Ok(())
    }

    /// Inference-only prediction `x_hat(x_t, c, t)` with per-row steps.
    pub fn predict(&self, x: &Matrix, c: &Matrix, steps: &[usize]) -> Result<Matrix> {
        self.check_batch(x, c, steps)?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let xv = tape.constant(x.clone());
        let cv = tape.constant(c.clone());
        let tv = tape.constant(time_embeddings(steps));
        let out = CdNet::forward(&mut tape, &vars, xv, cv, tv)?;
        Ok(tape.value(out).clone())
    }
}

/// `(1 + w) cond - w uncond`.
pub fn guidance_mix(cond: &Matrix, uncond: &Matrix, omega: f64) -> Result<Matrix> {
    if cond.shape() != uncond.shape() {
        return Err(Error::dim("guidance_mix", cond.shape(), uncond.shape()));
    }
    let data = cond
        .data()
        .iter()
        .zip(uncond.data())
        .map(|(&c, &u)| (1.0 + omega) * c - omega * u)
        .collect();
    Matrix::from_vec(cond.rows(), cond.cols(), data)
}

/// Classifier-free guided prediction: two network evaluations, one with the
/// condition and one with the empty (zero) token.
pub fn guided_prediction(net: &CdNet, x: &Matrix, c: &Matrix, steps: &[usize], omega: f64) -> Result<Matrix> {
    let cond = net.predict(x, c, steps)?;
    let uncond = net.predict(x, &Matrix::zeros(c.rows(), c.cols()), steps)?;
    guidance_mix(&cond, &uncond, omega)
}
