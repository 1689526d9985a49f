//! Forward corruption, the weighted reconstruction loss, and deterministic
//! guided reverse generation.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::cdnet::{guided_prediction, time_embeddings, CdNet};
use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::graphs::top_k_indices;
use crate::numerics::{AdamConfig, AdamState, Matrix, Tape};

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps` for one vector.
pub fn forward_noise<R: Rng + ?Sized>(x0: &[f64], t: usize, schedule: &DiffusionSchedule, rng: &mut R) -> Vec<f64> {
    assert!(
        t >= 1 && t <= schedule.steps(),
        "step {t} outside 1..={}",
        schedule.steps()
    );
    let a = schedule.abar(t).sqrt();
    let s = schedule.one_minus_abar(t).sqrt();
    x0.iter()
        .map(|&x| {
            let eps: f64 = StandardNormal.sample(rng);
            a * x + s * eps
        })
        .collect()
}

/// One sampled training batch: relation vectors are rows.
#[derive(Clone, Debug)]
pub struct BgdBatch {
    pub x0: Matrix,
    pub xt: Matrix,
    pub cond: Matrix,
    pub steps: Vec<usize>,
}

/// Samples `t`, the corrupted state and the condition dropout for each row.
pub fn sample_batch<R: Rng + ?Sized>(
    x0: &Matrix,
    cond: &Matrix,
    schedule: &DiffusionSchedule,
    p_mu: f64,
    rng: &mut R,
) -> Result<BgdBatch> {
    if x0.shape() != cond.shape() {
        return Err(Error::dim("bgd_batch", x0.shape(), cond.shape()));
    }
    let (b, n) = x0.shape();
    let mut xt = Matrix::zeros(b, n);
    let mut c = cond.clone();
    let mut steps = Vec::with_capacity(b);
    for r in 0..b {
        let t = rng.random_range(1..=schedule.steps());
        xt.row_mut(r)
            .copy_from_slice(&forward_noise(x0.row(r), t, schedule, rng));
        if rng.random::<f64>() < p_mu {
            c.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
        }
        steps.push(t);
    }
    Ok(BgdBatch {
        x0: x0.clone(),
        xt,
        cond: c,
        steps,
    })
}

/// Mean over the batch of `w_t * ||x0 - x_hat||^2`, built on `tape` with
/// trainable network parameters. Returns the loss node and the parameter
/// handles.
pub fn bgd_loss(
    tape: &mut Tape,
    net: &CdNet,
    batch: &BgdBatch,
    schedule: &DiffusionSchedule,
) -> Result<(crate::numerics::Var, super::CdNetVars)> {
    let vars = net.register(tape, true);
    let x0 = tape.constant(batch.x0.clone());
    let xt = tape.constant(batch.xt.clone());
    let c = tape.constant(batch.cond.clone());
    let temb = tape.constant(time_embeddings(&batch.steps));
    let weights = Matrix::from_fn(batch.steps.len(), 1, |r, _| schedule.loss_weight(batch.steps[r]));
    let w = tape.constant(weights);
    let pred = CdNet::forward(tape, &vars, xt, c, temb)?;
    let diff = tape.sub(x0, pred)?;
    let sq = tape.mul(diff, diff)?;
    let per_row = tape.sum_rows(sq);
    let weighted = tape.mul_col(per_row, w)?;
    let total = tape.sum(weighted);
    let loss = tape.scale(total, 1.0 / batch.steps.len().max(1) as f64);
    Ok((loss, vars))
}

/// One optimiser step on a sampled batch; returns the batch loss.
pub fn bgd_train_step(
    net: &mut CdNet,
    adam: &mut AdamState,
    batch: &BgdBatch,
    schedule: &DiffusionSchedule,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, vars) = bgd_loss(&mut tape, net, batch, schedule)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("diffusion loss is {value}")));
    }
    let mut grads = tape.backward(loss)?;
    let g: Vec<Matrix> = vars.all().into_iter().map(|v| grads.take(v)).collect();
    adam.step(&mut net.params_mut(), &g)?;
    Ok(value)
}

/// One guided reverse step from `state = x_t` to `x_{t-1}`. At `t = 1` this
/// is the guided prediction itself.
pub fn reverse_step(
    net: &CdNet,
    state: &Matrix,
    cond: &Matrix,
    t: usize,
    schedule: &DiffusionSchedule,
    omega: f64,
) -> Result<Matrix> {
    let steps = vec![t; state.rows()];
    let guided = guided_prediction(net, state, cond, &steps, omega)?;
    let (a, b) = schedule.reverse_coefficients(t);
    let next = if a == 0.0 {
        guided.scale(b)
    } else {
        state.scale(a).add(&guided.scale(b))?
    };
    if !next.is_finite() {
        return Err(Error::NonFinite(format!("reverse diffusion diverged at step {t}")));
    }
    Ok(next)
}

/// Deterministic guided reverse process started from the uncorrupted
/// vectors `x_T = x`. The noise draw of the stochastic sampler is omitted
/// since the variance term is dropped.
pub fn reverse_generate(
    net: &CdNet,
    x: &Matrix,
    cond: &Matrix,
    schedule: &DiffusionSchedule,
    omega: f64,
) -> Result<Matrix> {
    let mut state = x.clone();
    for t in (1..=schedule.steps()).rev() {
        state = reverse_step(net, &state, cond, t, schedule, omega)?;
    }
    Ok(state)
}

/// `S^d` with column `j` holding ones at the `k` largest entries of row `j`
/// of `generated`.
pub fn build_diffusion_graph(generated: &Matrix, k: usize) -> Result<Matrix> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let n = generated.rows();
    if generated.cols() != n {
        return Err(Error::dim("build_diffusion_graph", generated.shape(), (n, n)));
    }
    let mut out = Matrix::zeros(n, n);
    for j in 0..n {
        for i in top_k_indices(generated.row(j), k) {
            out.set(i, j, 1.0);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BgdConfig {
    pub steps: usize,
    pub noise_scale: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// `None` removes the encoder and decoder.
    pub latent_dim: Option<usize>,
    pub omega: f64,
    pub p_mu: f64,
    pub batch_size: usize,
    pub passes: usize,
    pub lr: f64,
}

impl Default for BgdConfig {
    fn default() -> Self {
        BgdConfig {
            steps: 5,
            noise_scale: 0.01,
            alpha_min: 1e-4,
            alpha_max: 0.02,
            latent_dim: Some(1000),
            omega: 2.0,
            p_mu: 0.1,
            batch_size: 512,
            passes: 1,
            lr: 1e-3,
        }
    }
}

impl BgdConfig {
    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::build(self.steps, self.noise_scale, self.alpha_min, self.alpha_max)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_mu) {
            return Err(Error::Config(format!("p_mu must lie in [0, 1], got {}", self.p_mu)));
        }
        if self.batch_size == 0 || self.passes == 0 {
            return Err(Error::Config("BGD batch size and passes must be positive".into()));
        }
        if !self.omega.is_finite() || !(self.lr > 0.0) {
            return Err(Error::Config("omega must be finite and lr positive".into()));
        }
        self.schedule().map(|_| ())
    }
}

/// The trainable diffusion module with its own optimiser state.
#[derive(Clone, Debug)]
pub struct Bgd {
    pub net: CdNet,
    pub adam: AdamState,
    pub schedule: DiffusionSchedule,
    pub config: BgdConfig,
}

impl Bgd {
    pub fn new<R: Rng + ?Sized>(num_items: usize, config: BgdConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let schedule = config.schedule()?;
        let net = CdNet::new(num_items, config.latent_dim, rng)?;
        let adam = AdamState::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            &net.param_shapes(),
        );
        Ok(Bgd {
            net,
            adam,
            schedule,
            config,
        })
    }

    /// `config.passes` shuffled passes over all items; `semantic` and
    /// `behavioral` are the `|I| x |I|` graphs whose columns are the data.
    /// Returns the mean batch loss.
    pub fn train<R: Rng + ?Sized>(&mut self, semantic: &Matrix, behavioral: &Matrix, rng: &mut R) -> Result<f64> {
        let xs = semantic.transpose();
        let cs = behavioral.transpose();
        let mut order: Vec<usize> = (0..xs.rows()).collect();
        let (mut total, mut batches) = (0.0, 0usize);
        for _ in 0..self.config.passes {
            order.shuffle(rng);
            for chunk in order.chunks(self.config.batch_size) {
                let batch = sample_batch(
                    &xs.select_rows(chunk),
                    &cs.select_rows(chunk),
                    &self.schedule,
                    self.config.p_mu,
                    rng,
                )?;
                total += bgd_train_step(&mut self.net, &mut self.adam, &batch, &self.schedule)?;
                batches += 1;
            }
        }
        Ok(total / batches.max(1) as f64)
    }

    /// Denoised relation vectors for every item, one per row.
    pub fn generate(&self, semantic: &Matrix, behavioral: &Matrix) -> Result<Matrix> {
        reverse_generate(
            &self.net,
            &semantic.transpose(),
            &behavioral.transpose(),
            &self.schedule,
            self.config.omega,
        )
    }

    pub fn diffusion_graph(&self, semantic: &Matrix, behavioral: &Matrix, k: usize) -> Result<Matrix> {
        build_diffusion_graph(&self.generate(semantic, behavioral)?, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn schedule() -> DiffusionSchedule {
        DiffusionSchedule::build(5, 0.01, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn forward_noise_statistics() {
        let s = DiffusionSchedule::build(5, 1.0, 1e-4, 0.5).unwrap();
        let t = 5;
        let n = 100_000;
        let mut r = rng::stream(11, "test");
        let x0 = [0.0, 2.0];
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let x = forward_noise(&x0, t, &s, &mut r);
            for k in 0..2 {
                sum[k] += x[k];
                sq[k] += x[k] * x[k];
            }
        }
        let var = s.one_minus_abar(t);
        let sigma = var.sqrt();
        for k in 0..2 {
            let mean = sum[k] / n as f64;
            let expect = s.abar(t).sqrt() * x0[k];
            assert!(
                (mean - expect).abs() < 4.0 * sigma / (n as f64).sqrt(),
                "{mean} vs {expect}"
            );
            let v = sq[k] / n as f64 - mean * mean;
            // Var of the sample variance is 2 sigma^4 / n for a Gaussian.
            assert!((v - var).abs() < 4.0 * var * (2.0 / n as f64).sqrt(), "{v} vs {var}");
        }
    }

    #[test]
    fn tiny_noise_limit_returns_input() {
        let s = DiffusionSchedule::build(2, 1e-12, 1e-4, 0.02).unwrap();
        let x = forward_noise(&[0.3, -1.0], 2, &s, &mut rng::stream(0, "t"));
        assert!((x[0] - 0.3).abs() < 1e-6 && (x[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn perfect_predictor_has_zero_loss_and_t1_weight_is_one() {
        let mut net = CdNet::new(3, None, &mut rng::stream(0, "init")).unwrap();
        for p in net.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let s = schedule();
        let zero = BgdBatch {
            x0: Matrix::zeros(1, 3),
            xt: Matrix::filled(1, 3, 0.5),
            cond: Matrix::zeros(1, 3),
            steps: vec![3],
        };
        let mut tape = Tape::new();
        let (loss, _) = bgd_loss(&mut tape, &net, &zero, &s).unwrap();
        assert_eq!(tape.scalar(loss), 0.0);
        let one = BgdBatch {
            x0: Matrix::from_rows(&[vec![1.0, 2.0, 0.0]]).unwrap(),
            steps: vec![1],
            ..zero
        };
        let mut tape = Tape::new();
        let (loss, _) = bgd_loss(&mut tape, &net, &one, &s).unwrap();
        assert_eq!(tape.scalar(loss), 5.0);
    }

    #[test]
    fn full_dropout_empties_every_condition() {
        let x = Matrix::filled(4, 3, 1.0);
        let b = sample_batch(&x, &x, &schedule(), 1.0, &mut rng::stream(1, "bgd")).unwrap();
        assert_eq!(b.cond, Matrix::zeros(4, 3));
        let b = sample_batch(&x, &x, &schedule(), 0.0, &mut rng::stream(1, "bgd")).unwrap();
        assert_eq!(b.cond, x);
    }

    #[test]
    fn last_reverse_step_returns_guided_prediction() {
        let s = DiffusionSchedule::build(1, 0.01, 1e-4, 0.02).unwrap();
        let net = CdNet::new(4, Some(2), &mut rng::stream(2, "init")).unwrap();
        let x = Matrix::from_fn(4, 4, |r, c| if r == c { 1.0 } else { 0.1 * c as f64 });
        let c = Matrix::identity(4);
        let out = reverse_generate(&net, &x, &c, &s, 3.0).unwrap();
        let expect = guided_prediction(&net, &x, &c, &[1; 4], 3.0).unwrap();
        assert_eq!(out, expect);
    }

    #[test]
    fn diffusion_graph_selection() {
        let one_hot = Matrix::from_fn(3, 3, |r, c| if c == (r + 1) % 3 { 1.0 } else { 0.0 });
        let g = build_diffusion_graph(&one_hot, 1).unwrap();
        assert_eq!(g.get(1, 0), 1.0);
        assert_eq!(g.column(0).iter().sum::<f64>(), 1.0);
        assert_eq!(build_diffusion_graph(&one_hot, 5).unwrap(), Matrix::filled(3, 3, 1.0));
    }

    #[test]
    fn training_reduces_loss_and_generation_is_deterministic() {
        let n = 12;
        let s = Matrix::from_fn(n, n, |i, j| if i / 6 == j / 6 && (i + j) % 2 == 0 { 1.0 } else { 0.0 });
        let cfg = BgdConfig {
            latent_dim: Some(4),
            lr: 1e-2,
            batch_size: 4,
            passes: 1,
            ..BgdConfig::default()
        };
        let mut bgd = Bgd::new(n, cfg, &mut rng::stream(0, "init")).unwrap();
        let mut r = rng::stream(0, "bgd");
        let first = bgd.train(&s, &s, &mut r).unwrap();
        let mut last = first;
        for _ in 0..60 {
            last = bgd.train(&s, &s, &mut r).unwrap();
        }
        assert!(last < first, "{last} !< {first}");
        let a = bgd.generate(&s, &s).unwrap();
        let b = bgd.generate(&s, &s).unwrap();
        assert_eq!(a.bits(), b.bits());
    }
}
