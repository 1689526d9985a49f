//! Acceptance suite. Runs every criterion at its stated tolerance, prints
//! one PASS/FAIL line per criterion and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;

use igdm_core::bgd::{
    bgd_loss, forward_noise, guided_prediction, reverse_step, sample_batch, BgdBatch, CdNet, DiffusionSchedule,
};
use igdm_core::datahub::{InteractionDataset, Pair, Triplet};
use igdm_core::eval::{evaluate, user_ndcg};
use igdm_core::graphs::{build_bipartite, cosine_similarity_matrix, knn_columns, normalize_sym, prune_co_occurrence};
use igdm_core::harness::{
    cmd_eval, cmd_sweep, load_data, prepare_synth, run_on, write_run, Axis, DataSource, RunConfig, CHECKPOINT_FILE,
    REPORT_FILE,
};
use igdm_core::numerics::{Matrix, SparseOperator, Tape};
use igdm_core::recmodel::{
    bpr_loss, contrastive_loss, joint_loss, train, Ablation, ModelConfig, PropagationGraphs, StaticGraphs, Variant,
};
use igdm_core::rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn desk_config() -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.cfg");
    RunConfig::from_file(&path).expect("desk config parses")
}

fn random_matrix(rows: usize, cols: usize, r: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

// ---------------------------------------------------------------- 1

fn diffusion_math() -> Outcome {
    let (s, amin, amax, t_max) = (0.01, 1e-4, 0.02, 5usize);
    let sched = DiffusionSchedule::build(t_max, s, amin, amax).map_err(|e| e.to_string())?;
    // Linear interpolation of the noise level, scaled by s.
    let oracle = |t: usize| s * (amin + (t - 1) as f64 / (t_max - 1) as f64 * (amax - amin));
    let e1 = (sched.one_minus_abar(1) - 1e-6).abs();
    let e5 = (sched.one_minus_abar(5) - 2e-4).abs();
    ensure(e1 <= 1e-15 && e5 <= 1e-15, || format!("endpoint errors {e1:e}, {e5:e}"))?;
    for t in 1..=t_max {
        let e = (sched.one_minus_abar(t) - oracle(t)).abs();
        ensure(e <= 1e-15, || format!("1-abar_{t} off the closed form by {e:e}"))?;
    }

    // Forward noise moments at n = 1e5 against 4-sigma bands.
    let n = 100_000;
    let mut worst: f64 = 0.0;
    for (sched, x) in [
        (sched.clone(), 0.7),
        (DiffusionSchedule::build(5, 1.0, 0.1, 0.9).unwrap(), -1.3),
    ] {
        for t in [1, 3, 5] {
            let xt = forward_noise(
                &vec![x; n],
                t,
                &sched,
                &mut rng::indexed_stream(11, "accept/noise", t as u64),
            );
            let mean = xt.iter().sum::<f64>() / n as f64;
            let var = xt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let (m0, v0) = (sched.abar(t).sqrt() * x, sched.one_minus_abar(t));
            let zm = (mean - m0).abs() / (v0 / n as f64).sqrt();
            let zv = (var - v0).abs() / (v0 * (2.0 / (n - 1) as f64).sqrt());
            ensure(zm < 4.0 && zv < 4.0, || {
                format!("t={t}: mean z {zm:.2}, variance z {zv:.2}")
            })?;
            worst = worst.max(zm).max(zv);
        }
    }

    // Guidance identities and the final reverse step.
    let mut r = rng::stream(5, "accept/guidance");
    let net = CdNet::new(6, Some(3), &mut r).unwrap();
    let (x, c) = (random_matrix(4, 6, &mut r), random_matrix(4, 6, &mut r));
    let steps = vec![1, 2, 3, 5];
    let cond = net.predict(&x, &c, &steps).unwrap();
    let uncond = net.predict(&x, &Matrix::zeros(4, 6), &steps).unwrap();
    ensure(guided_prediction(&net, &x, &c, &steps, 0.0).unwrap() == cond, || {
        "omega = 0 differs from the conditional prediction".into()
    })?;
    ensure(guided_prediction(&net, &x, &c, &steps, -1.0).unwrap() == uncond, || {
        "omega = -1 differs from the unconditional prediction".into()
    })?;
    for omega in [-1.0, 0.0, 2.0, 8.0] {
        let stepped = reverse_step(&net, &x, &c, 1, &sched, omega).unwrap();
        let guided = guided_prediction(&net, &x, &c, &[1; 4], omega).unwrap();
        ensure(stepped == guided, || {
            format!("reverse step at t=1 is not the guided prediction (omega {omega})")
        })?;
    }
    Ok(format!("endpoints exact to 1e-15, worst noise z-score {worst:.2}"))
}

// ---------------------------------------------------------------- 2

/// Largest relative error between tape gradients and central differences.
fn fd_check(params: &[Matrix], grads: &[Matrix], loss: impl Fn(&[Matrix]) -> f64) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for k in 0..p.len() {
        for e in 0..p[k].len() {
            let orig = p[k].data()[e];
            p[k].data_mut()[e] = orig + h;
            let up = loss(&p);
            p[k].data_mut()[e] = orig - h;
            let down = loss(&p);
            p[k].data_mut()[e] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = grads[k].data()[e];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

fn gradients() -> Outcome {
    let tol = 1e-4;
    let mut r = rng::stream(17, "accept/grad");
    let mut report = Vec::new();

    // (a) denoiser loss, |I| = 6, k_d = 3.
    let sched = DiffusionSchedule::build(5, 0.01, 1e-4, 0.02).unwrap();
    let net = CdNet::new(6, Some(3), &mut r).unwrap();
    let x0 = Matrix::from_fn(4, 6, |_, _| f64::from(u8::from(r.random::<f64>() < 0.5)));
    let cond = Matrix::from_fn(4, 6, |_, _| f64::from(u8::from(r.random::<f64>() < 0.5)));
    let batch = sample_batch(&x0, &cond, &sched, 0.25, &mut r).unwrap();
    let loss_of = |net: &CdNet, b: &BgdBatch| {
        let mut tape = Tape::new();
        let (l, _) = bgd_loss(&mut tape, net, b, &sched).unwrap();
        tape.scalar(l)
    };
    let mut tape = Tape::new();
    let (l, vars) = bgd_loss(&mut tape, &net, &batch, &sched).unwrap();
    let g = tape.backward(l).unwrap();
    let grads: Vec<Matrix> = vars.all().into_iter().map(|v| g.wrt(v)).collect();
    let params: Vec<Matrix> = net.params().into_iter().cloned().collect();
    let e = fd_check(&params, &grads, |p| {
        let mut n = net.clone();
        for (dst, src) in n.params_mut().into_iter().zip(p) {
            *dst = src.clone();
        }
        loss_of(&n, &batch)
    });
    ensure(e < tol, || format!("denoiser loss: max relative error {e:e}"))?;
    report.push(format!("denoiser {e:.1e}"));

    // (b) BPR, |U| = 3, |I| = 4, d = 2.
    let (u, i) = (random_matrix(3, 2, &mut r), random_matrix(4, 2, &mut r));
    let trip = |user, pos, neg| Triplet { user, pos, neg };
    let batch = vec![trip(0, 1, 2), trip(1, 0, 3), trip(2, 3, 1), trip(0, 2, 0)];
    let bpr = |p: &[Matrix], grads: bool| {
        let mut t = Tape::new();
        let (uv, iv) = (t.param(p[0].clone()), t.param(p[1].clone()));
        let l = bpr_loss(&mut t, uv, iv, &batch).unwrap();
        let g = grads.then(|| {
            let g = t.backward(l).unwrap();
            vec![g.wrt(uv), g.wrt(iv)]
        });
        (t.scalar(l), g)
    };
    let p = vec![u.clone(), i.clone()];
    let e = fd_check(&p, &bpr(&p, true).1.unwrap(), |q| bpr(q, false).0);
    ensure(e < tol, || format!("BPR: max relative error {e:e}"))?;
    report.push(format!("bpr {e:.1e}"));

    // (c) contrastive, two 4 x 2 views.
    let (a, b) = (random_matrix(4, 2, &mut r), random_matrix(4, 2, &mut r));
    let anchors = [0usize, 2, 3];
    let cl = |p: &[Matrix], grads: bool| {
        let mut t = Tape::new();
        let (av, bv) = (t.param(p[0].clone()), t.param(p[1].clone()));
        let l = contrastive_loss(&mut t, av, bv, &anchors, 0.2).unwrap();
        let g = grads.then(|| {
            let g = t.backward(l).unwrap();
            vec![g.wrt(av), g.wrt(bv)]
        });
        (t.scalar(l), g)
    };
    let p = vec![a, b];
    let e = fd_check(&p, &cl(&p, true).1.unwrap(), |q| cl(q, false).0);
    ensure(e < tol, || format!("contrastive: max relative error {e:e}"))?;
    report.push(format!("cl {e:.1e}"));

    // (d) joint objective through every propagation graph.
    let ds = InteractionDataset::new(
        (0..3).map(|k| format!("u{k}")).collect(),
        (0..4).map(|k| format!("i{k}")).collect(),
        vec![(0, 0), (0, 1), (1, 1), (1, 3), (2, 2), (2, 0)],
        vec![],
        vec![],
    )
    .unwrap();
    let ring = Matrix::from_fn(4, 4, |i, j| {
        if i == j || (i + 1) % 4 == j || (j + 1) % 4 == i {
            1.0
        } else {
            0.0
        }
    });
    let pair = Matrix::from_fn(4, 4, |i, j| if i / 2 == j / 2 { 1.0 } else { 0.0 });
    let graphs = PropagationGraphs {
        bipartite: Arc::new(SparseOperator::new(build_bipartite(&ds).unwrap())),
        semantic: Some(Arc::new(SparseOperator::from_dense(&normalize_sym(&ring)))),
        diffusion: Some(Arc::new(SparseOperator::from_dense(&normalize_sym(&pair)))),
    };
    let cfg = ModelConfig {
        dim: 2,
        lambda_cl: 0.3,
        lambda_reg: 0.05,
        ..ModelConfig::default()
    };
    let batch = vec![trip(0, 0, 3), trip(1, 3, 2), trip(2, 2, 1)];
    let joint = |p: &[Matrix], grads: bool| {
        let mut t = Tape::new();
        let (uv, iv) = (t.param(p[0].clone()), t.param(p[1].clone()));
        let (l, parts) = joint_loss(&mut t, &graphs, uv, iv, &batch, &cfg).unwrap();
        assert!(parts.cl > 0.0 && parts.reg > 0.0, "every term must be active");
        let g = grads.then(|| {
            let g = t.backward(l).unwrap();
            vec![g.wrt(uv), g.wrt(iv)]
        });
        (t.scalar(l), g)
    };
    let p = vec![u, i];
    let e = fd_check(&p, &joint(&p, true).1.unwrap(), |q| joint(q, false).0);
    ensure(e < tol, || format!("joint: max relative error {e:e}"))?;
    report.push(format!("joint {e:.1e}"));
    Ok(format!("max relative errors: {}", report.join(", ")))
}

// ---------------------------------------------------------------- 3

fn graph_suite() -> Outcome {
    let mut r = rng::stream(23, "accept/graphs");
    for (n, k) in [(5, 1), (8, 3), (12, 12), (20, 7)] {
        let sim = random_matrix(n, n, &mut r);
        let adj = knn_columns(&sim, k).unwrap();
        for j in 0..n {
            let deg = (0..n).filter(|&i| adj.get(i, j) != 0.0).count();
            ensure(deg == k, || {
                format!("column {j} of a {n}-node KNN graph has degree {deg}, expected {k}")
            })?;
        }
    }

    let g = random_matrix(10, 6, &mut r);
    let scaled = Matrix::from_fn(10, 6, |i, j| g.get(i, j) * (0.01 + 7.0 * i as f64));
    let d = cosine_similarity_matrix(&g).max_abs_diff(&cosine_similarity_matrix(&scaled));
    ensure(d <= 1e-12, || {
        format!("cosine similarity moved by {d:e} under row scaling")
    })?;

    let two = normalize_sym(&Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
    let d2 = two.max_abs_diff(&Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
    let path = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]).unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let expect = Matrix::from_rows(&[vec![0.0, h, 0.0], vec![h, 0.0, h], vec![0.0, h, 0.0]]).unwrap();
    let d3 = normalize_sym(&path).max_abs_diff(&expect);
    ensure(d2 <= 1e-12 && d3 <= 1e-12, || {
        format!("normalisation hand cases off by {d2:e}, {d3:e}")
    })?;

    // Item 0 co-occurs twice with item 1 and three times with item 2.
    let counts = Matrix::from_rows(&[vec![5.0, 2.0, 3.0], vec![2.0, 4.0, 0.0], vec![3.0, 0.0, 6.0]]).unwrap();
    let pruned = prune_co_occurrence(&counts, 2, 2.0);
    ensure(pruned.get(1, 0) == 0.0, || "count 2 with epsilon 2 was kept".into())?;
    ensure(pruned.get(2, 0) != 0.0, || "count 3 with epsilon 2 was pruned".into())?;
    Ok("degree, scale invariance, hand cases and pruning all exact".into())
}

// ---------------------------------------------------------------- 4

/// Exhaustive sort over every candidate; the simplest possible ranking.
fn oracle_metrics(scores: &Matrix, train: &[Vec<usize>], test: &[Vec<usize>], k: usize) -> (f64, f64) {
    let (mut rsum, mut nsum, mut users) = (0.0, 0.0, 0usize);
    for u in 0..scores.rows() {
        if test[u].is_empty() {
            continue;
        }
        let mut cand: Vec<usize> = (0..scores.cols()).filter(|i| !train[u].contains(i)).collect();
        cand.sort_by(|&a, &b| scores.get(u, b).partial_cmp(&scores.get(u, a)).unwrap().then(a.cmp(&b)));
        cand.truncate(k);
        let hits: Vec<usize> = (0..cand.len()).filter(|&p| test[u].contains(&cand[p])).collect();
        rsum += hits.len() as f64 / test[u].len() as f64;
        let dcg: f64 = hits.iter().map(|&p| 1.0 / ((p + 2) as f64).log2()).sum();
        let idcg: f64 = (0..test[u].len().min(k)).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
        nsum += dcg / idcg;
        users += 1;
    }
    (rsum / users as f64, nsum / users as f64)
}

fn metric_oracle() -> Outcome {
    let mut r = rng::stream(29, "accept/metrics");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (nu, ni) = (r.random_range(1..6), r.random_range(3..12));
        let (mut train, mut test) = (vec![Vec::new(); nu], vec![Vec::new(); nu]);
        let (mut tr, mut te): (Vec<Pair>, Vec<Pair>) = (Vec::new(), Vec::new());
        for u in 0..nu {
            let first = r.random_range(0..ni);
            train[u].push(first);
            tr.push((u, first));
            for i in 0..ni {
                if i == first {
                    continue;
                }
                match r.random_range(0..4) {
                    0 => {
                        train[u].push(i);
                        tr.push((u, i));
                    }
                    1 => {
                        test[u].push(i);
                        te.push((u, i));
                    }
                    _ => {}
                }
            }
        }
        let ds = InteractionDataset::new(
            (0..nu).map(|k| format!("u{k}")).collect(),
            (0..ni).map(|k| format!("i{k}")).collect(),
            tr,
            vec![],
            te,
        )
        .unwrap();
        // Coarse scores so ties are common.
        let scores = Matrix::from_fn(nu, ni, |_, _| f64::from(r.random_range(0..4u8)));
        let ks = [1, 3, 5, 20];
        let m = evaluate(&scores, &ds, ds.test(), &ks).unwrap();
        if m.users == 0 {
            continue;
        }
        for k in ks {
            let (ro, no) = oracle_metrics(&scores, &train, &test, k);
            worst = worst.max((m.recall_at(k) - ro).abs()).max((m.ndcg_at(k) - no).abs());
        }
    }
    ensure(worst <= 1e-12, || {
        format!("metrics differ from the oracle by {worst:e}")
    })?;
    let v = user_ndcg(&[4, 9, 1], &[9], 10);
    let e = (v - 1.0 / 3f64.log2()).abs();
    ensure(e <= 1e-12, || format!("rank-2 NDCG off by {e:e}"))?;
    Ok(format!("100 instances, worst deviation {worst:e}"))
}

// ---------------------------------------------------------------- 5

fn planted_end_to_end() -> Outcome {
    let base = desk_config();
    let (mut gaps, mut wins, mut lines) = (Vec::new(), 0, Vec::new());
    for seed in 0..5u64 {
        let mut cfg = base.clone();
        cfg.set("synth.seed", &seed.to_string()).unwrap();
        cfg.train.seed = seed;
        let full = cfg.clone().resolve().map_err(|e| e.to_string())?;
        let mut woci = cfg.clone();
        woci.ablations.push(Ablation::WoCi);
        let woci = woci.resolve().map_err(|e| e.to_string())?;
        let data = load_data(&full.data).map_err(|e| e.to_string())?;
        let a = run_on(&full, &data).map_err(|e| e.to_string())?.report.result;
        let b = run_on(&woci, &data).map_err(|e| e.to_string())?.report.result;
        let q = a.graph_quality.as_ref().ok_or("no graph quality in report")?;
        let sd = q.diffusion.as_ref().ok_or("no diffusion graph in report")?.precision;
        let s = q.semantic.precision;
        gaps.push(sd - s);
        let (ra, rb) = (a.test.recall_at(20), b.test.recall_at(20));
        wins += usize::from(ra > rb);
        lines.push(format!(
            "seed {seed}: S {s:.3} S^d {sd:.3} R@20 full {ra:.4} vs wo-ci {rb:.4}"
        ));
    }
    for l in &lines {
        println!("    {l}");
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let per_seed = gaps.iter().filter(|&&g| g >= 0.05).count();
    let summary = format!("mean S^d - S = {mean_gap:.3} ({per_seed}/5 seeds individually >= 0.05), wins {wins}/5");
    ensure(mean_gap >= 0.05, || format!("(a) fails: {summary}"))?;
    ensure(wins >= 4, || format!("(b) fails: {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- 6

fn ablation_mechanics() -> Outcome {
    let cfg = RunConfig {
        ablations: vec![Ablation::WoCi],
        ..RunConfig::default()
    };
    let cfg = cfg.resolve().unwrap();
    let mut r = rng::stream(31, "accept/ablation");
    let net = CdNet::new(6, Some(3), &mut r).unwrap();
    let x = random_matrix(3, 6, &mut r);
    let steps = [1, 2, 5];
    let base = guided_prediction(&net, &x, &random_matrix(3, 6, &mut r), &steps, cfg.train.bgd.omega).unwrap();
    for _ in 0..5 {
        let other = guided_prediction(&net, &x, &random_matrix(3, 6, &mut r), &steps, cfg.train.bgd.omega).unwrap();
        ensure(other == base, || {
            "w/o CI guided prediction depends on the condition".into()
        })?;
    }
    let sched = cfg.train.bgd.schedule().unwrap();
    let batch = sample_batch(
        &Matrix::filled(8, 6, 1.0),
        &Matrix::filled(8, 6, 1.0),
        &sched,
        cfg.train.bgd.p_mu,
        &mut r,
    )
    .unwrap();
    ensure(batch.cond.data().iter().all(|&v| v == 0.0), || {
        "w/o CI training still sees the condition".into()
    })?;

    let mut desk = desk_config();
    desk.train.max_epochs = 3;
    desk.train.patience = 100;
    let data = load_data(&desk.data).unwrap();
    let mut wocl = desk.clone();
    wocl.ablations = vec![Ablation::WoCl];
    let wocl = wocl.resolve().unwrap();
    let graphs = StaticGraphs::build(&data.dataset, &[&data.visual, &data.textual], &wocl.train).unwrap();
    let out = train(&data.dataset, &graphs, &wocl.train).map_err(|e| e.to_string())?;
    ensure(out.epochs.iter().all(|e| e.cl == 0.0), || {
        "w/o CL reported a non-zero CL term".into()
    })?;

    let mut woed = desk.clone();
    woed.ablations = vec![Ablation::WoEd];
    let woed = woed.resolve().unwrap();
    let out = run_on(&woed, &data).map_err(|e| e.to_string())?;
    let n = data.dataset.num_items();
    let net = out
        .checkpoint
        .state
        .cdnet
        .as_ref()
        .ok_or("w/o ED run has no denoiser")?;
    // MLP in 2n + 10, hidden n, out n; no codec.
    let expected = (2 * n + 10) * n + n + n * n + n;
    ensure(!net.has_codec() && net.param_count() == expected, || {
        format!(
            "w/o ED parameter count {} (codec {}), expected {expected}",
            net.param_count(),
            net.has_codec()
        )
    })?;
    let kd = 4;
    let with_codec = CdNet::new(n, Some(kd), &mut r).unwrap().param_count();
    let codec_expected = 2 * n * kd + (2 * kd + 10) * kd + kd + kd * kd + kd;
    ensure(with_codec == codec_expected, || {
        format!("codec parameter count {with_codec}, expected {codec_expected}")
    })?;
    Ok(format!(
        "w/o ED on |I|={n}: {expected} parameters vs {with_codec} with k_d={kd}"
    ))
}

// ---------------------------------------------------------------- 7

fn refresh_efficiency() -> Outcome {
    let mut cfg = desk_config();
    cfg.train.max_epochs = 20;
    cfg.train.patience = 1000;
    let data = load_data(&cfg.data).unwrap();
    let mut times = Vec::new();
    for variant in [Variant::Full, Variant::PeriodicRefresh] {
        let mut c = cfg.clone();
        c.variant = variant;
        let c = c.resolve().unwrap();
        let graphs = StaticGraphs::build(&data.dataset, &[&data.visual, &data.textual], &c.train).unwrap();
        let out = train(&data.dataset, &graphs, &c.train).map_err(|e| e.to_string())?;
        ensure(out.epochs.len() == 20, || {
            format!("{} stopped after {} epochs", variant.name(), out.epochs.len())
        })?;
        times.push((out.timings.bgd_seconds, out.timings.refreshes));
    }
    let ratio = times[1].0 / times[0].0;
    let summary = format!(
        "BGD time R=5 {:.3}s ({} refreshes) / R=1 {:.3}s ({} refreshes) = {ratio:.3}",
        times[1].0, times[1].1, times[0].0, times[0].1
    );
    ensure(ratio <= 0.3, || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- 8

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = desk_config();
    cfg.train.max_epochs = 6;
    let cfg = cfg.resolve().unwrap();
    let data = load_data(&cfg.data).unwrap();
    let mut runs = Vec::new();
    for threads in [1, 4] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let dir = tmp.path().join(format!("t{threads}"));
        let (report, ckpt, metrics, prepared, sweep) = pool.install(|| {
            let out = run_on(&cfg, &data).unwrap();
            write_run(&out, &dir.join("train")).unwrap();
            let metrics = cmd_eval(&dir.join("train").join(CHECKPOINT_FILE), None, &[10, 20]).unwrap();
            let spec = match &cfg.data {
                DataSource::Synth(s) => s.clone(),
                DataSource::Prepared(_) => unreachable!(),
            };
            prepare_synth(&spec, &dir.join("data")).unwrap();
            let prepared: Vec<Vec<u8>> = ["train.tsv", "visual.f32", "dataset.manifest"]
                .iter()
                .map(|f| std::fs::read(dir.join("data").join(f)).unwrap())
                .collect();
            let axis: Axis = "omega=0,4".parse().unwrap();
            let mut short = cfg.clone();
            short.train.max_epochs = 3;
            cmd_sweep(&short, &[axis], threads, &dir.join("sweep")).unwrap();
            let sweep: Vec<Vec<u8>> = ["summary.tsv", "point-000/report.jsonl", "point-001/report.jsonl"]
                .iter()
                .map(|f| std::fs::read(dir.join("sweep").join(f)).unwrap())
                .collect();
            (
                std::fs::read(dir.join("train").join(REPORT_FILE)).unwrap(),
                std::fs::read(dir.join("train").join(CHECKPOINT_FILE)).unwrap(),
                metrics,
                prepared,
                sweep,
            )
        });
        ensure(metrics == out_metrics(&report), || {
            "eval does not reproduce the report's final metrics".into()
        })?;
        runs.push((report, ckpt, metrics, prepared, sweep));
    }
    let (a, b) = (&runs[0], &runs[1]);
    ensure(a.0 == b.0, || "train reports differ between 1 and 4 threads".into())?;
    ensure(a.1 == b.1, || "checkpoints differ between 1 and 4 threads".into())?;
    ensure(a.2 == b.2, || "eval metrics differ between 1 and 4 threads".into())?;
    ensure(a.3 == b.3, || {
        "prepared artifacts differ between 1 and 4 threads".into()
    })?;
    ensure(a.4 == b.4, || "sweep outputs differ between 1 and 4 sweep jobs".into())?;
    Ok(format!(
        "train, eval, prepare and sweep bit-identical at 1 and 4 threads ({} report bytes)",
        a.0.len()
    ))
}

fn out_metrics(report: &[u8]) -> igdm_core::eval::MetricReport {
    let text = String::from_utf8(report.to_vec()).unwrap();
    igdm_core::harness::RunReport::parse_jsonl(&text, std::path::Path::new("report"))
        .unwrap()
        .result
        .test
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 diffusion math", diffusion_math, Some(Duration::from_secs(30))),
        ("2 gradients", gradients, Some(Duration::from_secs(60))),
        ("3 graphs", graph_suite, None),
        ("4 metric oracle", metric_oracle, None),
        (
            "5 planted end-to-end",
            planted_end_to_end,
            Some(Duration::from_secs(600)),
        ),
        ("6 ablation mechanics", ablation_mechanics, None),
        ("7 periodic refresh efficiency", refresh_efficiency, None),
        ("8 determinism", determinism, None),
    ];
    let mut failed = 0;
    for (name, f, budget) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(m), Some(b)) if elapsed > b => Err(format!("{m}; took {elapsed:.1?}, budget {b:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(m) => println!("PASS criterion {name}: {m} [{elapsed:.1?}]"),
            Err(m) => {
                failed += 1;
                println!("FAIL criterion {name}: {m} [{elapsed:.1?}]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
