//! Acceptance suite: runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.
//!
//! The generalization, sweep and reproducibility criteria share two complete
//! pipeline runs with [`acceptance_config`].

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bearing_gnn::contact::ContactLaw;
use bearing_gnn::eval::Summary;
use bearing_gnn::geometry::{BearingConfig, BearingState, LoadSchedule, RigidBody2D, Vec2};
use bearing_gnn::gnn::{batch_loss, gnn_forward, gradients, GnnHyper, GnnModel, LossWeights};
use bearing_gnn::graph::{record_to_graph, Graph, EDGE_FEATURES, FIRST_ROLLER_NODE, NODE_FEATURES};
use bearing_gnn::pipeline::{run_all, AllLayout, PipelineConfig, CHECKPOINT_FILE};
use bearing_gnn::simulator::{static_equilibrium, BearingModel, Trajectory};
use bearing_gnn::trainer::{load_checkpoint, trajectory_file_name, TrainConfig};
use bearing_gnn::trajectory_io::read_trajectory;

// Pinned thresholds.
const ROUND_TRIP_TOL: f64 = 1e-10;
const DOUBLING_TOL: f64 = 1e-12;
const RK4_RATE: std::ops::RangeInclusive<f64> = 3.8..=4.2;
const BALANCE_TOL: f64 = 0.005;
const EQUILIBRIUM_TOL: f64 = 0.01;
/// Absolute floor for coordinates whose oracle value is zero, m.
const EQUILIBRIUM_FLOOR_M: f64 = 1e-9;
const SYMMETRY_TOL_M: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-4;
const GENERALIZATION_PCT: f64 = 10.0;
const UNLOADED_RATIO: f64 = 0.10;
const SWEEP_DEVIATION: f64 = 0.20;
const UNLOADING_RATIO: f64 = 0.10;
const PIPELINE_BUDGET_S: f64 = 3600.0;

/// Reduced training schedule that fits the suite's runtime; the model
/// architecture and everything else keep their defaults.
fn acceptance_config() -> PipelineConfig {
    PipelineConfig {
        train: TrainConfig {
            steps: 12000,
            learning_rate: 1e-3,
            lr_decay: 0.1,
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn contact_law() -> Outcome {
    let start = Instant::now();
    let law = ContactLaw::for_roller_length(12.0).unwrap();
    let mut worst_rt: f64 = 0.0;
    for i in 0..=1000 {
        let q = 10f64.powf(2.0 + 3.0 * i as f64 / 1000.0);
        worst_rt = worst_rt.max((law.force(law.deflection(q)) - q).abs() / q);
    }
    let ratio = 2f64.powf(10.0 / 9.0);
    let mut worst_ratio: f64 = 0.0;
    for i in 0..=1000 {
        let d = 1e-4 + 0.03 * i as f64 / 1000.0;
        worst_ratio = worst_ratio.max((law.force(2.0 * d) / law.force(d) - ratio).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_rt < ROUND_TRIP_TOL && worst_ratio < DOUBLING_TOL && secs < 1.0,
        format!("round trip {worst_rt:.2e}, doubling {worst_ratio:.2e}, {secs:.3} s"),
    )
}

/// Inner ring alone with every contact open: a damped linear oscillator.
fn linear_ring_error(dt: f64, t_end: f64) -> f64 {
    let config = BearingConfig {
        radial_clearance: 10.0,
        inner_damping: 200.0,
        ..BearingConfig::n209(15)
    };
    let (m, c, k) = (config.inner_ring_mass, config.inner_damping, config.ground_spring_stiffness);
    let model = BearingModel::new(&config).unwrap();
    let schedule = LoadSchedule::with_base_load(1.0);
    let x0 = 1e-3;
    let mut state = BearingState {
        inner: RigidBody2D { position: Vec2::new(x0, 0.0), velocity: Vec2::ZERO },
        outer: RigidBody2D::default(),
    };
    let n = (t_end / dt).round() as usize;
    for step in 0..n {
        state = model.rk4_step(&state, step, dt, &schedule).unwrap();
    }
    let a = c / (2.0 * m);
    let wd = (k / m - a * a).sqrt();
    let t = n as f64 * dt;
    let exact = x0 * (-a * t).exp() * ((wd * t).cos() + a / wd * (wd * t).sin());
    (state.inner.position.x - exact).abs()
}

fn integrator_order() -> Outcome {
    let e: Vec<f64> = [4e-5, 2e-5, 1e-5].iter().map(|&dt| linear_ring_error(dt, 4e-3)).collect();
    let rates = [(e[0] / e[1]).log2(), (e[1] / e[2]).log2()];
    outcome(rates.iter().all(|r| RK4_RATE.contains(r)), format!("rates {:.3}, {:.3}", rates[0], rates[1]))
}

fn physics(trajectories: &[Trajectory]) -> Outcome {
    let mut worst_balance: f64 = 0.0;
    let mut worst_eq: f64 = 0.0;
    for traj in trajectories {
        let config = &traj.header.config;
        let base = traj.header.schedule.base_load;
        for (step, load) in [(2000, base), (2499, base), (4999, 2.0 * base)] {
            let rec = traj.record_at(step).unwrap();
            let vertical: f64 = rec.rollers.iter().map(|r| r.q_outer.y).sum();
            worst_balance = worst_balance.max((vertical + rec.external_force.y).abs() / load);
            if step == 2499 {
                continue;
            }
            let eq = static_equilibrium(config, rec.external_force).unwrap();
            let pairs = [
                (rec.state.inner.position.x, eq.inner.position.x),
                (rec.state.inner.position.y, eq.inner.position.y),
                (rec.state.outer.position.x, eq.outer.position.x),
                (rec.state.outer.position.y, eq.outer.position.y),
            ];
            for (sim, oracle) in pairs {
                let allowed = EQUILIBRIUM_TOL * oracle.abs() + EQUILIBRIUM_FLOOR_M;
                worst_eq = worst_eq.max((sim - oracle).abs() / allowed);
            }
        }
    }
    outcome(
        trajectories.len() == 31 && worst_balance < BALANCE_TOL && worst_eq <= 1.0,
        format!(
            "{} trajectories, worst balance {:.3}%, worst equilibrium error {:.3} of allowance",
            trajectories.len(),
            100.0 * worst_balance,
            worst_eq
        ),
    )
}

fn symmetry(trajectories: &[Trajectory]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut steps = 0;
    for traj in trajectories {
        for rec in &traj.records {
            worst = worst.max(rec.state.inner.position.x.abs()).max(rec.state.outer.position.x.abs());
            steps += 1;
        }
    }
    outcome(worst < SYMMETRY_TOL_M && steps > 0, format!("max |x| {worst:.2e} m over {steps} records"))
}

/// A loaded 3-roller graph with moving rings.
fn three_roller_graph() -> Graph {
    let config = BearingConfig::n209(3);
    let model = BearingModel::new(&config).unwrap();
    let state = BearingState {
        inner: RigidBody2D { position: Vec2::new(1e-6, 2e-5), velocity: Vec2::new(0.01, -0.02) },
        outer: RigidBody2D { position: Vec2::new(-2e-6, -1e-5), velocity: Vec2::new(0.0, 0.03) },
    };
    let rec = model.record(1, 4e-5, state, Vec2::new(0.0, -3000.0)).unwrap();
    let mut g = record_to_graph(&rec, &config, "check").unwrap();
    // Bring features and targets to order one so every parameter matters.
    for v in &mut g.node_features {
        *v = (*v * 0.01).tanh();
    }
    for v in g.edge_targets.iter_mut().chain(&mut g.node_targets) {
        *v *= 1e-3;
    }
    for (i, v) in g.edge_features.iter_mut().enumerate() {
        if i % EDGE_FEATURES == 2 {
            *v -= 5.5;
        }
    }
    g
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let hyper = GnnHyper { latent_size: 8, n_blocks: 1, ..GnnHyper::default() };
    let model = GnnModel::new(&hyper, 5).unwrap();
    let graph = three_roller_graph();
    let graphs = [&graph];
    let weights = LossWeights::default();
    let (_, grads) = gradients(&model, &graphs, weights).unwrap();
    let analytic = grads.flatten();
    let flat = model.flatten();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut worst_name = String::new();
    for spec in model.manifest() {
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for i in spec.offset..spec.offset + spec.len() {
            let mut probe = model.clone();
            let mut p = flat.clone();
            p[i] = flat[i] + h;
            probe.assign(&p).unwrap();
            let up = batch_loss(&probe, &graphs, weights).unwrap();
            p[i] = flat[i] - h;
            probe.assign(&p).unwrap();
            let down = batch_loss(&probe, &graphs, weights).unwrap();
            let fd = (up - down) / (2.0 * h);
            diff2 += (fd - analytic[i]).powi(2);
            norm2 += fd * fd;
        }
        let rel = diff2.sqrt() / norm2.sqrt().max(1e-12);
        if rel > worst {
            worst = rel;
            worst_name = spec.name.clone();
        }
    }
    outcome(
        worst < GRAD_TOL,
        format!(
            "{} tensors, worst relative error {worst:.2e} ({worst_name}), {:.1} s",
            model.manifest().len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

/// Relabels rollers so old roller k becomes roller `perm[k]`, keeping the
/// canonical edge layout.
fn relabel(g: &Graph, perm: &[usize]) -> Graph {
    let n = g.n_rollers();
    let mut out = g.clone();
    for k in 0..n {
        let (old, new) = (FIRST_ROLLER_NODE + k, FIRST_ROLLER_NODE + perm[k]);
        out.node_features[new * NODE_FEATURES..(new + 1) * NODE_FEATURES].copy_from_slice(g.node_row(old));
        out.node_targets[2 * new..2 * new + 2].copy_from_slice(&g.node_targets[2 * old..2 * old + 2]);
        for j in 0..4 {
            let (eo, en) = (4 * k + j, 4 * perm[k] + j);
            out.edge_features[en * EDGE_FEATURES..(en + 1) * EDGE_FEATURES].copy_from_slice(g.edge_row(eo));
            out.edge_targets[2 * en..2 * en + 2].copy_from_slice(&g.edge_targets[2 * eo..2 * eo + 2]);
        }
    }
    out
}

fn equivariance(model: &GnnModel, graph: &Graph) -> Outcome {
    let n = graph.n_rollers();
    let (e, v) = gnn_forward(model, graph).unwrap();
    let mut perms: Vec<Vec<usize>> = vec![(0..n).map(|k| (k + 4) % n).collect(), (0..n).rev().collect()];
    perms.push((0..n).map(|k| (7 * k + 3) % n).collect());
    let mut equivariant = true;
    for perm in &perms {
        let (ep, vp) = gnn_forward(model, &relabel(graph, perm)).unwrap();
        for k in 0..n {
            let (a, b) = (FIRST_ROLLER_NODE + k, FIRST_ROLLER_NODE + perm[k]);
            equivariant &= v[2 * a..2 * a + 2] == vp[2 * b..2 * b + 2];
            equivariant &= e[8 * k..8 * k + 8] == ep[8 * perm[k]..8 * perm[k] + 8];
        }
        equivariant &= v[..4] == vp[..4];
    }

    let mut zeroed = model.clone();
    for b in &mut zeroed.blocks {
        b.edge_mlp = b.edge_mlp.zeros_like();
        b.node_mlp = b.node_mlp.zeros_like();
    }
    let (ez, vz) = gnn_forward(&zeroed, graph).unwrap();
    let (el, _) = zeroed.edge_encoder.forward_batch(&graph.edge_features, graph.n_edges()).unwrap();
    let (nl, _) = zeroed.node_encoder.forward_batch(&graph.node_features, graph.n_nodes).unwrap();
    let identity = ez == zeroed.edge_decoder.forward_batch(&el, graph.n_edges()).unwrap().0
        && vz == zeroed.node_decoder.forward_batch(&nl, graph.n_nodes).unwrap().0;
    outcome(
        equivariant && identity,
        format!("{} relabelings bit-identical: {equivariant}; residual identity exact: {identity}", perms.len()),
    )
}

fn files_equal(a: &Path, b: &Path) -> bool {
    match (std::fs::read(a), std::fs::read(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn reproducibility(first: &Path, second: &Path) -> Outcome {
    let rel = [
        "train/checkpoint.json",
        "train/history.csv",
        "eval/eval_rows.csv",
        "eval/sweep.csv",
        "eval/summary.json",
        "verify/sweep.csv",
    ];
    let differing: Vec<&str> = rel.iter().copied().filter(|r| !files_equal(&first.join(r), &second.join(r))).collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts byte-identical", rel.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn main() -> ExitCode {
    // Run only under `cargo test`; the libtest filter arguments are ignored.
    let root = std::env::temp_dir().join(format!("bearing-gnn-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&root);
    let mut results: Vec<(&str, Outcome)> = Vec::new();

    results.push(("1 contact law", contact_law()));
    results.push(("2 integrator order", integrator_order()));

    let config = acceptance_config();
    let run_dirs: [PathBuf; 2] = [root.join("run_a"), root.join("run_b")];
    let start = Instant::now();
    let first = run_all(&config, &run_dirs[0], |_| {});
    let pipeline_secs = start.elapsed().as_secs_f64();

    let summary: Option<Summary> = match &first {
        Ok((_, s)) => Some(s.clone()),
        Err(e) => {
            eprintln!("pipeline failed: {e}");
            None
        }
    };
    let layout = AllLayout::new(&run_dirs[0]);
    let trajectories: Vec<Trajectory> = config
        .grid
        .cases()
        .iter()
        .filter_map(|&(n, f)| read_trajectory(&layout.trajectories.join(trajectory_file_name(n, f))).ok())
        .collect();
    results.push(("3 physics consistency", physics(&trajectories)));
    results.push(("4 symmetry", symmetry(&trajectories)));
    drop(trajectories);
    results.push(("5 gradient check", gradient_check()));

    let checkpoint = load_checkpoint(&layout.train.join(CHECKPOINT_FILE)).ok();
    let test_graph = checkpoint.as_ref().and_then(|ckpt| {
        let traj = read_trajectory(&layout.trajectories.join(trajectory_file_name(15, 13000.0))).ok()?;
        let g = record_to_graph(traj.record_at(2200)?, &traj.header.config, "n15_f13000").ok()?;
        ckpt.norm_stats.normalize_graph(&g).ok()
    });
    results.push((
        "6 equivariance",
        match (&checkpoint, &test_graph) {
            (Some(c), Some(g)) => equivariance(&c.model().unwrap(), g),
            _ => outcome(false, "no trained checkpoint"),
        },
    ));

    let steady = summary.as_ref().map(|s| s.steady_state.clone());
    let median = steady.as_ref().and_then(|s| s.top_roller_median_abs_pct_error);
    results.push((
        "7 generalization",
        match median {
            Some(m) => outcome(
                m <= GENERALIZATION_PCT && pipeline_secs <= PIPELINE_BUDGET_S,
                format!(
                    "top roller {} median |error| {m:.2}% over steps 2000-2400; pipeline {pipeline_secs:.0} s",
                    summary.as_ref().unwrap().top_roller
                ),
            ),
            None => outcome(false, "no evaluation summary"),
        },
    ));
    let ratio = steady.as_ref().and_then(|s| s.bottom_to_peak_ratio);
    results.push((
        "8 unloaded roller",
        match ratio {
            Some(r) => outcome(r <= UNLOADED_RATIO, format!("bottom/peak predicted load {:.2}%", 100.0 * r)),
            None => outcome(false, "no evaluation summary"),
        },
    ));
    let sweep = summary.as_ref().map(|s| s.sweep.clone());
    results.push((
        "9 verification sweep",
        match sweep.as_ref().and_then(|s| s.compressive_max_rel_deviation.zip(s.unloading_max_ratio)) {
            Some((dev, unl)) => outcome(
                dev <= SWEEP_DEVIATION && unl <= UNLOADING_RATIO,
                format!("compressive max deviation {:.2}%, unloading ratio {:.2}%", 100.0 * dev, 100.0 * unl),
            ),
            None => outcome(false, "no sweep summary"),
        },
    ));

    let second = run_all(&config, &run_dirs[1], |_| {});
    results.push((
        "10 reproducibility",
        if first.is_ok() && second.is_ok() {
            reproducibility(&run_dirs[0], &run_dirs[1])
        } else {
            outcome(false, "pipeline run failed")
        },
    ));
    let _ = std::fs::remove_dir_all(&root);

    println!();
    let mut failed = 0;
    for (name, o) in &results {
        println!("acceptance {name:<24} {}  {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
