//! Acceptance run: prints one PASS/FAIL line per criterion.
//!
//! Criteria 5 and 6 are empirical claims about curation outcomes. They are
//! reported but do not fail the run; every other criterion is a correctness
//! property and a FAIL there exits non-zero.

use std::collections::HashSet;
use std::fs;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use influence_prune::analysis::{fit_convex, loo_oracle, spearman, ConvexFitConfig};
use influence_prune::autodiff::{
    gradient, Curvature, Graph, HvpOperator, Objective, ParameterVector, Real, Var,
};
use influence_prune::curation::{
    rank, sweep, write_sweep_csv, Direction, Strategy, SweepConfig, SweepScores,
};
use influence_prune::data::{split, synthesize, DatasetSplit, SplitConfig, SynthConfig};
use influence_prune::influence::{
    cg_solve, gradient_similarity_matrix, influence_matrix, CgConfig, HvpMode, ScoreOptions,
    ScoreTable, Tolerance,
};
use influence_prune::model::{
    wald_half_width, Architecture, LinearConfig, PairObjective, RewardModel, TrainConfig,
    TransformerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Res<T> = influence_prune::Result<T>;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> ParameterVector {
    ParameterVector::new((0..d).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn transformer(width: usize, rank: usize, seed: u64) -> RewardModel {
    RewardModel::new(
        Architecture::Transformer(TransformerConfig {
            vocab_size: 40,
            width,
            layers: 1,
            heads: 1,
            ffn_width: 2 * width,
            rank,
            alpha: 2.0 * rank as f64,
            dropout: 0.1,
            train_head: true,
        }),
        seed,
    )
    .unwrap()
}

/// Small noisy synthetic preference split for the linear model.
fn synthetic(n: usize, noise: f64, seed: u64, val_size: usize, test_fraction: f64) -> DatasetSplit {
    let truth = RewardModel::random_linear(LinearConfig { vocab_size: 4096, features: 16 }, seed).unwrap();
    let data = synthesize(
        &SynthConfig { n, noise_rate: noise, seed, vocab: 32, ..SynthConfig::default() },
        &truth,
    )
    .unwrap();
    split(&data, &SplitConfig { val_size, test_fraction, seed }).unwrap()
}

fn linear(features: usize) -> RewardModel {
    RewardModel::new(Architecture::Linear(LinearConfig { vocab_size: 4096, features }), 0).unwrap()
}

fn mean_gradient<O: Objective>(obj: &O, theta: &ParameterVector) -> Vec<f64> {
    let mut acc = vec![0.0; obj.dim()];
    for i in 0..obj.len() {
        let g = gradient(obj, theta, i).unwrap();
        for (a, x) in acc.iter_mut().zip(g.as_slice()) {
            *a += x;
        }
    }
    acc.iter().map(|a| a / obj.len() as f64).collect()
}

/// Dense mean Hessian by central differences of the exact gradient.
fn fd_hessian<O: Objective>(obj: &O, theta: &ParameterVector, h: f64) -> DMatrix<f64> {
    let d = obj.dim();
    let mut m = DMatrix::zeros(d, d);
    for k in 0..d {
        let mut plus = theta.clone();
        plus.as_mut_slice()[k] += h;
        let mut minus = theta.clone();
        minus.as_mut_slice()[k] -= h;
        let (gp, gm) = (mean_gradient(obj, &plus), mean_gradient(obj, &minus));
        for r in 0..d {
            m[(r, k)] = (gp[r] - gm[r]) / (2.0 * h);
        }
    }
    // Symmetrize away the O(h²) asymmetry of the difference quotients.
    (&m + m.transpose()) * 0.5
}

fn criterion_1() -> Res<Verdict> {
    let mut worst_fd = 0.0f64;
    let mut worst_sym = 0.0f64;
    let mut worst_lin = 0.0f64;
    let mut dims = Vec::new();
    for seed in 0..3u64 {
        let model = transformer(4, 1, seed);
        let d = model.num_trainable();
        dims.push(d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = synthetic(40, 0.25, seed, 5, 0.0);
        let model = model.with_trainable(random_vec(&mut rng, d, 0.5))?;
        let obj = PairObjective::new(&model, &data.train.pairs()[..6])?;
        let theta = model.trainable().clone();
        let op = HvpOperator::full_batch(&obj, theta.clone(), 0.0)?;
        let h = fd_hessian(&obj, &theta, 1e-4);
        for _ in 0..3 {
            let v = random_vec(&mut rng, d, 1.0);
            let hv = op.apply(&v, 0)?;
            let dense = &h * DVector::from_column_slice(v.as_slice());
            worst_fd = worst_fd.max(rel_err(hv.as_slice(), dense.as_slice()));

            let u = random_vec(&mut rng, d, 1.0);
            let hu = op.apply(&u, 0)?;
            worst_sym = worst_sym.max(rel(u.dot(&hv), v.dot(&hu)));

            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let mut comb = u.scaled(a);
            comb.axpy(b, &v);
            let mut expect = hu.scaled(a);
            expect.axpy(b, &hv);
            worst_lin = worst_lin.max(rel_err(op.apply(&comb, 0)?.as_slice(), expect.as_slice()));
        }
    }
    Ok(verdict(
        dims.iter().all(|&d| d <= 50) && worst_fd < 1e-5 && worst_sym < 1e-8 && worst_lin < 1e-8,
        format!(
            "d = {dims:?}; HVP vs finite-difference Hessian {worst_fd:.2e}, symmetry {worst_sym:.2e}, linearity {worst_lin:.2e}"
        ),
    ))
}

/// `½ Σ a_k θ_k²`, one example.
struct Diagonal(Vec<f64>);

impl Objective for Diagonal {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn len(&self) -> usize {
        1
    }
    fn record<S: Real>(&self, g: &mut Graph<S>, _index: usize) -> Res<Var> {
        let d = self.0.len();
        let theta = g.param(0, 1, d);
        let a = g.constant_f64(1, d, &self.0);
        let sq = g.mul(theta, theta);
        let w = g.mul(sq, a);
        let s = g.sum(w);
        Ok(g.scale(s, 0.5))
    }
}

fn dense_solve_check<O: Objective>(obj: &O, theta: &ParameterVector, damping: f64, g: &ParameterVector) -> Res<f64> {
    let d = obj.dim();
    let cfg = CgConfig {
        damping,
        max_iters: d,
        tolerance: Tolerance::Relative(1e-10),
        hvp_mode: HvpMode::Deterministic,
        ..CgConfig::default()
    };
    let op = cfg.operator(obj, theta.clone())?;
    let (x, _) = cg_solve(&op, g, &cfg)?;
    // Dense operator matrix assembled column by column from exact HVPs.
    let mut a = DMatrix::zeros(d, d);
    for k in 0..d {
        let mut e = ParameterVector::zeros(d);
        e.as_mut_slice()[k] = 1.0;
        let col = op.apply(&e, 0)?;
        a.set_column(k, &DVector::from_column_slice(col.as_slice()));
    }
    let a = (&a + a.transpose()) * 0.5;
    let exact = a
        .lu()
        .solve(&DVector::from_column_slice(g.as_slice()))
        .expect("non-singular system");
    Ok(rel_err(x.as_slice(), exact.as_slice()))
}

fn criterion_2() -> Res<Verdict> {
    let mut notes = Vec::new();
    let mut pass = true;

    let diag = Diagonal(vec![2.0, 3.0]);
    let cfg = CgConfig { damping: 0.01, max_iters: 2, hvp_mode: HvpMode::Deterministic, ..CgConfig::default() };
    let op = cfg.operator(&diag, ParameterVector::zeros(2))?;
    let (x, _) = cg_solve(&op, &ParameterVector::new(vec![1.0, 1.0]), &cfg)?;
    let err = rel_err(x.as_slice(), &[1.0 / 2.01, 1.0 / 3.01]);
    pass &= err < 1e-10;
    notes.push(format!("diagonal {err:.1e}"));

    // Convex linear model, d = 120.
    let data = synthetic(300, 0.25, 1, 20, 0.0);
    let model = fit_convex(&linear(120), &data.train, &ConvexFitConfig::default())?;
    let obj = PairObjective::new(&model, data.train.pairs())?;
    let vobj = PairObjective::new(&model, data.val.pairs())?;
    let g = gradient(&vobj, model.trainable(), 0)?;
    let err = dense_solve_check(&obj, model.trainable(), 1e-2, &g)?;
    pass &= err < 1e-4;
    notes.push(format!("linear d=120 {err:.1e}"));

    // Adapter transformer at a generic point, d = 136. The Hessian there is
    // indefinite, so damping is set just above its most negative eigenvalue.
    let model = transformer(8, 2, 4);
    let d = model.num_trainable();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = model.with_trainable(random_vec(&mut rng, d, 0.3))?;
    let obj = PairObjective::new(&model, &data.train.pairs()[..20])?;
    let probe = HvpOperator::full_batch(&obj, model.trainable().clone(), 0.0)?;
    let mut h = DMatrix::zeros(d, d);
    for k in 0..d {
        let mut e = ParameterVector::zeros(d);
        e.as_mut_slice()[k] = 1.0;
        h.set_column(k, &DVector::from_column_slice(probe.apply(&e, 0)?.as_slice()));
    }
    let lo = SymmetricEigen::new((&h + h.transpose()) * 0.5).eigenvalues.min();
    let damping = (1e-2f64).max(-lo + 0.1);
    let g = random_vec(&mut rng, d, 1.0);
    let err = dense_solve_check(&obj, model.trainable(), damping, &g)?;
    pass &= err < 1e-4 && d <= 200;
    notes.push(format!("transformer d={d} (λ_min(H) = {lo:.3}, damping {damping:.3}) {err:.1e}"));

    Ok(verdict(pass, format!("CG vs dense solve with K = d: {}", notes.join(", "))))
}

fn criterion_3() -> Res<Verdict> {
    let data = synthetic(60, 0.25, 3, 10, 0.0);
    assert_eq!((data.train.len(), data.val.len()), (50, 10));
    let fit = ConvexFitConfig::default();
    let student = linear(8);
    let loo = loo_oracle(&student, &data, &fit)?;
    let cfg = CgConfig {
        damping: fit.l2,
        max_iters: student.num_trainable(),
        tolerance: Tolerance::Relative(1e-10),
        hvp_mode: HvpMode::Deterministic,
        ..CgConfig::default()
    };
    let table = influence_matrix(&loo.full_model, &data, &cfg, &ScoreOptions::default())?;
    let mut by_delta = loo.delta_by_id();
    by_delta.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let oracle: Vec<u64> = by_delta.iter().map(|(id, _)| *id).collect();
    let rho = spearman(&rank(&table), &oracle)?;
    Ok(verdict(
        rho > 0.9,
        format!("50 train / 10 val, Spearman(mean influence, leave-one-out delta) = {rho:.4}"),
    ))
}

fn criterion_4() -> Res<Verdict> {
    let data = synthetic(200, 0.25, 4, 20, 0.0);
    let model = fit_convex(&linear(16), &data.train, &ConvexFitConfig::default())?;
    let options = ScoreOptions::default();
    let sim = gradient_similarity_matrix(&model, &data, &options)?;
    let zero = CgConfig {
        damping: 1.0,
        curvature: Curvature::Zero,
        hvp_mode: HvpMode::Deterministic,
        ..CgConfig::default()
    };
    let inf = influence_matrix(&model, &data, &zero, &options)?;
    let max_diff = inf.scores().iter().zip(sim.scores()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let huge = CgConfig { damping: 1e6, hvp_mode: HvpMode::Deterministic, ..CgConfig::default() };
    let far = influence_matrix(&model, &data, &huge, &options)?;
    let rho = spearman(&rank(&far), &rank(&sim))?;
    Ok(verdict(
        max_diff <= 1e-10 && rho > 0.999,
        format!("H = 0, λ = 1: max |Δ| = {max_diff:.1e}; λ = 1e6: Spearman = {rho:.6}"),
    ))
}

/// The desk-scale curation instance shared by criteria 5 and 6.
struct Curation {
    split: DatasetSplit,
    influence: ScoreTable,
    similarity: ScoreTable,
    cells: Vec<influence_prune::curation::SweepCell>,
}

fn curation_instance(seed: u64) -> Res<Curation> {
    let split = synthetic(2000, 0.25, seed, 100, 0.2);
    let init = linear(32);
    let tc = TrainConfig { learning_rate: 0.5, epochs: 10, ..TrainConfig::default() };
    let trained = influence_prune::model::train(&init, &split.train, &tc)?.model;
    let cg = CgConfig { hvp_mode: HvpMode::Deterministic, max_iters: 32, ..CgConfig::default() };
    let influence = influence_matrix(&trained, &split, &cg, &ScoreOptions::default())?;
    let similarity = gradient_similarity_matrix(&trained, &split, &ScoreOptions::default())?;
    let cells = sweep(
        &init,
        &split,
        SweepScores { influence: Some(&influence), gradient_similarity: Some(&similarity) },
        &SweepConfig { fractions: vec![10.0, 25.0, 30.0], ..SweepConfig::default() },
        &tc,
    )?;
    Ok(Curation { split, influence, similarity, cells })
}

fn accuracy(c: &Curation, strategy: Option<Strategy>, direction: Direction, fraction: f64) -> f64 {
    let cell = c
        .cells
        .iter()
        .find(|cell| match (&cell.plan, strategy) {
            (None, None) => true,
            (Some(p), Some(s)) => p.strategy == s && p.direction == direction && p.fraction == fraction,
            _ => false,
        })
        .expect("sweep cell present");
    cell.outcome.as_ref().expect("sweep cell succeeded").accuracy.accuracy
}

fn top_decile_precision(c: &Curation, table: &ScoreTable) -> f64 {
    let flipped: HashSet<u64> = c.split.train.iter().filter(|p| p.is_flipped()).map(|p| p.id).collect();
    let ranking = rank(table);
    let k = (ranking.len() as f64 * 0.1).round() as usize;
    ranking[..k].iter().filter(|id| flipped.contains(id)).count() as f64 / k as f64
}

fn criterion_5(instances: &[(u64, Curation)]) -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for (i, (seed, c)) in instances.iter().enumerate() {
        let precision = top_decile_precision(c, &c.influence);
        let base = accuracy(c, None, Direction::DropMostHarmful, 0.0);
        let pruned = accuracy(c, Some(Strategy::Influence), Direction::DropMostHarmful, 25.0);
        if i == 0 {
            pass = precision >= 0.5 && pruned >= base;
        }
        lines.push(format!(
            "seed {seed}: top-10% flipped precision {precision:.3} (similarity {:.3}), baseline {base:.4}, harmful@25% {pruned:.4}",
            top_decile_precision(c, &c.similarity)
        ));
    }
    verdict(pass, lines.join("; "))
}

fn criterion_6(instances: &[(u64, Curation)]) -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for (i, (seed, c)) in instances.iter().enumerate() {
        for s in [Strategy::Influence, Strategy::GradientSimilarity] {
            let helpful = accuracy(c, Some(s), Direction::DropMostHelpful, 30.0);
            let harmful = accuracy(c, Some(s), Direction::DropMostHarmful, 30.0);
            if i == 0 {
                pass &= helpful < harmful;
            }
            lines.push(format!("seed {seed} {}: helpful@30% {helpful:.4} vs harmful@30% {harmful:.4}", s.as_str()));
        }
    }
    verdict(pass, lines.join("; "))
}

fn criterion_7() -> Res<Verdict> {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(300, 0.25, 5, 20, 0.2);
    let init = linear(16);
    let tc = TrainConfig { learning_rate: 0.5, epochs: 4, ..TrainConfig::default() };
    let trained = influence_prune::model::train(&init, &data.train, &tc)?.model;
    let cg = CgConfig { hvp_mode: HvpMode::Deterministic, max_iters: 16, ..CgConfig::default() };

    let mut files: Vec<Vec<u8>> = Vec::new();
    let mut tag = 0;
    let mut dump = |t: &ScoreTable| -> Res<Vec<u8>> {
        tag += 1;
        let (c, j) = (dir.path().join(format!("{tag}.csv")), dir.path().join(format!("{tag}.json")));
        t.save(&c, &j)?;
        let mut bytes = fs::read(&c).unwrap();
        bytes.extend(fs::read(&j).unwrap());
        Ok(bytes)
    };
    let mut tables = Vec::new();
    for shards in [1, 4, 1, 4] {
        let o = ScoreOptions { shards };
        let inf = influence_matrix(&trained, &data, &cg, &o)?;
        let sim = gradient_similarity_matrix(&trained, &data, &o)?;
        files.push(dump(&inf)?);
        files.push(dump(&sim)?);
        tables.push((inf, sim));
    }
    let tables_equal = files.chunks(2).all(|c| c == &files[..2]);

    let mut sweeps = Vec::new();
    for run in 0..2 {
        let (inf, sim) = &tables[run * 2 + 1];
        let cells = sweep(
            &init,
            &data,
            SweepScores { influence: Some(inf), gradient_similarity: Some(sim) },
            &SweepConfig::default(),
            &tc,
        )?;
        let path = dir.path().join(format!("sweep{run}.csv"));
        write_sweep_csv(&cells, &path)?;
        sweeps.push(fs::read(&path).unwrap());
    }
    let sweeps_equal = sweeps[0] == sweeps[1];
    Ok(verdict(
        tables_equal && sweeps_equal,
        format!(
            "score tables identical over runs and shards {{1, 4}}: {tables_equal}; sweep CSVs identical: {sweeps_equal}"
        ),
    ))
}

fn permutations(n: usize) -> Vec<Vec<u64>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, (n - 1) as u64);
            out.push(q);
        }
    }
    out
}

fn pearson_of_ranks(a: &[u64], b: &[u64]) -> f64 {
    let pos = |v: &[u64], id: u64| v.iter().position(|x| *x == id).unwrap() as f64;
    let ids: Vec<u64> = a.to_vec();
    let ra: Vec<f64> = ids.iter().map(|&i| pos(a, i)).collect();
    let rb: Vec<f64> = ids.iter().map(|&i| pos(b, i)).collect();
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn criterion_8() -> Res<Verdict> {
    let w = wald_half_width(0.5, 100);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for n in 2..=5 {
        let perms = permutations(n);
        for a in &perms {
            for b in &perms {
                worst = worst.max((spearman(a, b)? - pearson_of_ranks(a, b)).abs());
                checked += 1;
            }
        }
    }
    let mut ends = true;
    for n in 2..=10u64 {
        let id: Vec<u64> = (0..n).collect();
        let rev: Vec<u64> = id.iter().rev().copied().collect();
        ends &= (spearman(&id, &id)? - 1.0).abs() < 1e-12 && (spearman(&id, &rev)? + 1.0).abs() < 1e-12;
    }
    Ok(verdict(
        (w - 0.098).abs() < 1e-12 && worst < 1e-12 && ends,
        format!("Wald(0.5, 100) = {w:.6}; Spearman vs Pearson of ranks over {checked} permutation pairs, max |Δ| = {worst:.1e}; ±1 at n ≤ 10: {ends}"),
    ))
}

fn report(n: usize, name: &str, elapsed: Duration, limit: Duration, gating: bool, result: Res<Verdict>) -> bool {
    let (pass, detail) = match result {
        Ok(v) => (v.pass && elapsed <= limit, v.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let label = if pass { "PASS" } else { "FAIL" };
    let note = if gating { "" } else { " [reported]" };
    println!(
        "criterion {n} ({name}): {label}{note} | {detail} | {:.1}s (limit {}s)",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass || !gating
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn main() {
    let secs = Duration::from_secs;
    let mut ok = true;
    let (r, t) = timed(criterion_1);
    ok &= report(1, "HVP exactness", t, secs(10), true, r);
    let (r, t) = timed(criterion_2);
    ok &= report(2, "CG correctness", t, secs(30), true, r);
    let (r, t) = timed(criterion_3);
    ok &= report(3, "influence vs leave-one-out", t, secs(300), true, r);
    let (r, t) = timed(criterion_4);
    ok &= report(4, "baseline equivalence", t, secs(60), true, r);

    // Seed 7 decides the verdict; seeds 8 and 9 show how stable it is.
    let (instances, t) = timed(|| -> Res<Vec<(u64, Curation)>> {
        [7u64, 8, 9].into_iter().map(|s| Ok((s, curation_instance(s)?))).collect()
    });
    match instances {
        Ok(instances) => {
            ok &= report(5, "noise detection", t, secs(1200), false, Ok(criterion_5(&instances)));
            ok &= report(6, "direction asymmetry", t, secs(1200), false, Ok(criterion_6(&instances)));
        }
        Err(e) => {
            let msg = e.to_string();
            ok &= report(5, "noise detection", t, secs(1200), false, Err(e));
            ok &= report(6, "direction asymmetry", t, secs(1200), false, Ok(verdict(false, format!("error: {msg}"))));
        }
    }

    let (r, t) = timed(criterion_7);
    ok &= report(7, "determinism", t, secs(120), true, r);
    let (r, t) = timed(criterion_8);
    ok &= report(8, "statistics", t, secs(10), true, r);
    if !ok {
        std::process::exit(1);
    }
}
