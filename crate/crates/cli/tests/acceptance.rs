//! Acceptance run: one line per criterion, non-zero exit if any fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use merlin_cli::cli::Preset;
use merlin_cli::manifest::{Manifest, Thresholds};
use merlin_core::bandpower::{
    logbp, solve_timeseries, standardize_channels, Band, TimeseriesFeatures,
};
use merlin_core::independence::{gaussian_kernel_matrix, hsic, median_heuristic, partial_correlation};
use merlin_core::manifold::{
    gradcheck, steepest_descent, DescentConfig, ProductPoint, ProductVector, SpherePoint,
};
use merlin_core::merlin::{
    constraint_in_view, random_starts, standardize_mixture, BandwidthPolicy, LinearFeatures,
    LinearObjective, NonlinearObjective, Problem,
};
use merlin_core::stats::median;
use merlin_core::synthetic::{
    d_separated, oscillatory_recovery_score, recovery_score, sample_oscillatory, sample_sem,
    CausalGraph, MixingKind, OscillatorySpec, SemSpec,
};
use merlin_core::{solve, Mode, SolveConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

// 1 -------------------------------------------------------------------------

/// `(1/m²)ΣK∘L + (1/m⁴)ΣK·ΣL − (2/m³)Σ_i(Σ_j K_ij)(Σ_q L_iq)`.
fn double_sum_hsic(k: &DMatrix<f64>, l: &DMatrix<f64>) -> f64 {
    let m = k.nrows() as f64;
    let mut cross = 0.0;
    let mut rows = 0.0;
    for i in 0..k.nrows() {
        for j in 0..k.ncols() {
            cross += k[(i, j)] * l[(i, j)];
        }
        rows += k.row(i).sum() * l.row(i).sum();
    }
    cross / (m * m) + k.sum() * l.sum() / m.powi(4) - 2.0 * rows / m.powi(3)
}

fn hsic_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let m = 5 + i % 4;
        let (p, q) = (1 + i % 2, 1 + i % 3);
        let x = DMatrix::from_vec(m, p, normals(&mut rng, m * p));
        let y = DMatrix::from_vec(m, q, normals(&mut rng, m * q));
        let k = gaussian_kernel_matrix(&x, median_heuristic(&x).unwrap()).unwrap();
        let l = gaussian_kernel_matrix(&y, median_heuristic(&y).unwrap()).unwrap();
        let diff = (hsic(&x, &y).unwrap() - double_sum_hsic(k.values(), l.values())).abs();
        worst = worst.max(diff);
    }
    Outcome {
        pass: worst <= 1e-10,
        detail: format!("50 instances, max |diff| = {worst:.2e} (limit 1e-10)"),
    }
}

// 2 -------------------------------------------------------------------------

fn flat(g: &ProductVector) -> Vec<f64> {
    let mut v = g.sphere.as_slice().to_vec();
    v.extend(&g.scalars);
    v
}

fn nonlinear_errors(problem: &Problem<'_>, seed: u64) -> Vec<f64> {
    let obj = NonlinearObjective::new(problem).unwrap();
    let dim = problem.basis().ncols();
    random_starts(dim, 5, seed)
        .into_iter()
        .enumerate()
        .map(|(k, start)| {
            let p = ProductPoint::new(start, vec![0.6 + 0.2 * k as f64, 0.03 + 0.04 * k as f64]);
            let e = obj.evaluate(&p, BandwidthPolicy::Median, true).unwrap();
            let frozen = BandwidthPolicy::Fixed(e.bandwidths.unwrap());
            let mut x0 = p.sphere.coordinates().as_slice().to_vec();
            x0.extend(&p.scalars);
            gradcheck::check(
                |x| {
                    let b = DVector::from_column_slice(&x[..dim]);
                    obj.evaluate_at(&b, x[dim], x[dim + 1], frozen, false)
                        .unwrap()
                        .value
                },
                &flat(&e.gradient.unwrap()),
                &x0,
                gradcheck::STEP,
            )
        })
        .collect()
}

fn gradients() -> Outcome {
    let spec = SemSpec::linear(5, MixingKind::Gaussian, 11).unwrap();
    let (data, _) = sample_sem(&spec, 40).unwrap();
    let (x, transforms) = standardize_mixture(&data).unwrap();
    let features = LinearFeatures::new(x);
    let v = constraint_in_view(data.v(), &transforms);
    let c1 = data.c1();
    let problem = Problem::new(&features, data.stimulus(), &c1, &v).unwrap();

    let linear = LinearObjective::new(&problem).unwrap();
    let linear_errs: Vec<f64> = random_starts(4, 5, 12)
        .into_iter()
        .map(|p| {
            let b = p.coordinates();
            let g = linear.evaluate(b, true).unwrap().gradient.unwrap();
            gradcheck::check(
                |x| linear.evaluate(&DVector::from_column_slice(x), false).unwrap().value,
                g.sphere.as_slice(),
                b.as_slice(),
                gradcheck::STEP,
            )
        })
        .collect();
    let nonlinear_errs = nonlinear_errors(&problem, 13);

    let sem = SemSpec::linear(4, MixingKind::default(), 14).unwrap();
    let osc = OscillatorySpec {
        length: 64,
        ..OscillatorySpec::benchmark(sem)
    };
    let (ts, _) = sample_oscillatory(&osc, 30).unwrap();
    let c1 = merlin_core::bandpower::filtered_logbp(&ts, ts.v()).unwrap();
    let (standardized, transforms) = standardize_channels(&ts).unwrap();
    let v = constraint_in_view(ts.v(), &transforms);
    let features = TimeseriesFeatures::new(standardized, false).unwrap();
    let problem = Problem::new(&features, ts.stimulus(), &c1, &v).unwrap();
    let ts_errs = nonlinear_errors(&problem, 15);

    let worst = |e: &[f64]| e.iter().copied().fold(0.0f64, f64::max);
    let (a, b, c) = (worst(&linear_errs), worst(&nonlinear_errs), worst(&ts_errs));
    Outcome {
        pass: a <= 1e-4 && b <= 1e-4 && c <= 1e-4,
        detail: format!(
            "max rel err over 5 points: linear {a:.1e}, nonlinear {b:.1e}, timeseries (d=4, n=64) {c:.1e} (limit 1e-4)"
        ),
    }
}

// 3 -------------------------------------------------------------------------

struct Dag {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Dag {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.random_range(2..=6);
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < 0.4 {
                    edges.push((order[i], order[j]));
                }
            }
        }
        Self { n, edges }
    }

    fn descendants(&self, x: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n];
        let mut stack = vec![x];
        while let Some(u) = stack.pop() {
            if !seen[u] {
                seen[u] = true;
                stack.extend(self.edges.iter().filter(|e| e.0 == u).map(|e| e.1));
            }
        }
        (0..self.n).filter(|&i| seen[i]).collect()
    }

    fn adjacent(&self, u: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| (a == u).then_some(b).or((b == u).then_some(a)))
            .collect()
    }

    fn arrow(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    /// Every simple path from `a` to `b`, then explicit blocking on each.
    fn connected(&self, a: usize, b: usize, given: &[usize]) -> bool {
        let mut path = vec![a];
        self.search(&mut path, b, given)
    }

    fn search(&self, path: &mut Vec<usize>, b: usize, given: &[usize]) -> bool {
        let u = *path.last().unwrap();
        if u == b {
            return self.active(path, given);
        }
        for w in self.adjacent(u) {
            if path.contains(&w) {
                continue;
            }
            path.push(w);
            if self.search(path, b, given) {
                return true;
            }
            path.pop();
        }
        false
    }

    fn active(&self, path: &[usize], given: &[usize]) -> bool {
        path.windows(3).all(|t| {
            let (p, k, q) = (t[0], t[1], t[2]);
            if self.arrow(p, k) && self.arrow(q, k) {
                self.descendants(k).iter().any(|d| given.contains(d))
            } else {
                !given.contains(&k)
            }
        })
    }
}

fn small_sets(n: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for i in 0..n {
        for j in i + 1..n {
            out.push(vec![i, j]);
        }
    }
    out
}

fn d_separation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut checked, mut disagreements) = (0usize, 0usize);
    for _ in 0..200 {
        let dag = Dag::random(&mut rng);
        let names: Vec<String> = (0..dag.n).map(|i| format!("X{i}")).collect();
        let mut g = CausalGraph::new(&names).unwrap();
        for &(a, b) in &dag.edges {
            g.add_edge(&names[a], &names[b]).unwrap();
        }
        let sets = small_sets(dag.n);
        let mut conditioning = vec![Vec::new()];
        conditioning.extend(sets.iter().cloned());
        let label = |s: &[usize]| -> Vec<&str> { s.iter().map(|&i| names[i].as_str()).collect() };
        for a in &sets {
            for b in &sets {
                if b.iter().any(|x| a.contains(x)) {
                    continue;
                }
                for c in &conditioning {
                    if c.iter().any(|x| a.contains(x) || b.contains(x)) {
                        continue;
                    }
                    let oracle = !a
                        .iter()
                        .any(|&x| b.iter().any(|&y| dag.connected(x, y, c)));
                    let ours = d_separated(&g, &label(a), &label(b), &label(c)).unwrap();
                    checked += 1;
                    if ours != oracle {
                        disagreements += 1;
                    }
                }
            }
        }
    }
    Outcome {
        pass: disagreements == 0,
        detail: format!("200 DAGs, {checked} triples, {disagreements} disagreements"),
    }
}

// 4 -------------------------------------------------------------------------

fn rayleigh() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut hits = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let g = DMatrix::from_vec(6, 6, normals(&mut rng, 36));
        let m = (&g + g.transpose()) * 0.5;
        let top = m.clone().symmetric_eigen().eigenvalues.max();
        let start = SpherePoint::normalize(DVector::from_vec(normals(&mut rng, 6))).unwrap();
        let out = steepest_descent(
            |p| {
                let x = p.sphere.coordinates();
                let mx = &m * x;
                Ok((
                    -x.dot(&mx),
                    ProductVector {
                        sphere: -2.0 * mx,
                        scalars: Vec::new(),
                    },
                ))
            },
            ProductPoint::sphere_only(start),
            &DescentConfig::default(),
        )
        .unwrap();
        let gap = top + out.value;
        worst = worst.max(gap.abs());
        if gap.abs() <= 1e-6 {
            hits += 1;
        }
    }
    Outcome {
        pass: hits >= 19,
        detail: format!("{hits}/20 within 1e-6 of the top eigenvalue (need 19), worst gap {worst:.1e}"),
    }
}

// 5, 6 ----------------------------------------------------------------------

fn static_benchmark(square: bool) -> Outcome {
    let mode = if square { Mode::Nonlinear } else { Mode::Linear };
    let mut scores = Vec::new();
    let mut deps = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..20 {
        let spec = if square {
            SemSpec::square(10, MixingKind::default(), seed)
        } else {
            SemSpec::linear(10, MixingKind::default(), seed)
        }
        .unwrap();
        let (data, truth) = sample_sem(&spec, 300).unwrap();
        let cfg = SolveConfig {
            seed,
            ..SolveConfig::default()
        };
        let t = Instant::now();
        let report = solve(&data, mode, &cfg).unwrap();
        slowest = slowest.max(t.elapsed());
        scores.push(recovery_score(&report.input_filter, &data, &truth).unwrap().score);
        let y = data.output(&DVector::from_column_slice(&report.input_filter));
        deps.push(partial_correlation(&data.c1(), &y, data.stimulus()).unwrap().abs());
    }
    let score = median(&mut scores).unwrap();
    let fast = slowest < Duration::from_secs(60);
    if square {
        let dep = median(&mut deps).unwrap();
        let max_dep = deps.iter().copied().fold(0.0f64, f64::max);
        let frozen = Thresholds::for_preset(Preset::Fig1Square);
        let pinned = frozen.recovery_score == Some(0.8) && frozen.linear_dep_max == Some(0.2);
        Outcome {
            pass: score >= 0.8 && dep <= 0.2 && pinned,
            detail: format!(
                "median score {score:.3} (need 0.8), median linear dep {dep:.3} (max {max_dep:.3}, limit 0.2), slowest solve {:.1} s",
                slowest.as_secs_f64()
            ),
        }
    } else {
        let pinned = Thresholds::for_preset(Preset::Fig1).recovery_score == Some(0.9);
        Outcome {
            pass: score >= 0.9 && fast && pinned,
            detail: format!(
                "median score {score:.3} (need 0.9), slowest solve {:.2} s (limit 60 s)",
                slowest.as_secs_f64()
            ),
        }
    }
}

// 7 -------------------------------------------------------------------------

fn timeseries() -> Outcome {
    let t = Instant::now();
    let mut scores = Vec::new();
    for seed in 0..20 {
        let sem = SemSpec::linear(4, MixingKind::default(), seed).unwrap();
        let (ts, truth) = sample_oscillatory(&OscillatorySpec::benchmark(sem), 200).unwrap();
        let cfg = SolveConfig {
            seed,
            ..SolveConfig::default()
        };
        let report = solve_timeseries(&ts, Mode::Nonlinear, &cfg).unwrap();
        scores.push(oscillatory_recovery_score(&report.input_filter, &ts, &truth).unwrap().score);
    }
    let score = median(&mut scores).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let band = Band::new(40.0, 65.0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = normals(&mut rng, 512);
        let c: f64 = rng.random_range(-10.0..10.0);
        let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
        let lhs = logbp(&scaled, 256.0, band).unwrap();
        let rhs = logbp(&x, 256.0, band).unwrap() + 2.0 * c.abs().ln();
        worst = worst.max((lhs - rhs).abs());
    }
    let elapsed = t.elapsed();
    Outcome {
        pass: score >= 0.8 && worst <= 1e-9 && elapsed < Duration::from_secs(300),
        detail: format!(
            "median score {score:.3} (need 0.8), scaling identity max err {worst:.1e} (limit 1e-9), {:.0} s (limit 300 s)",
            elapsed.as_secs_f64()
        ),
    }
}

// 8 -------------------------------------------------------------------------

fn merlin(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_merlin"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(out.stdout)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let presets = ["fig1", "fig1-square", "oscillatory", "oscillatory-square", "oscillatory-null"];
    let mut identical = Vec::new();
    for preset in presets {
        let dir = tmp.path().join(preset);
        let dir_s = dir.to_str().unwrap();
        let result = (|| -> Result<bool, String> {
            merlin(&["synth", "--preset", preset, "--seed", "8", "--out", dir_s])?;
            let manifest = Manifest::read(&dir.join("manifest.json")).map_err(|e| e.to_string())?;
            let mode = serde_json::to_value(manifest.recommended_mode).unwrap();
            let mode = mode.as_str().unwrap().to_string();
            let run = |name: &str| -> Result<Vec<u8>, String> {
                let out = dir.join(name);
                merlin(&["run", "--mode", &mode, "--data", dir_s, "--seed", "8", "--out", out.to_str().unwrap()])?;
                fs::read(Path::new(&out)).map_err(|e| e.to_string())
            };
            Ok(run("a.json")? == run("b.json")?)
        })();
        identical.push((preset, result));
    }
    let pass = identical.iter().all(|(_, r)| matches!(r, Ok(true)));
    let detail = identical
        .iter()
        .map(|(p, r)| match r {
            Ok(true) => format!("{p} identical"),
            Ok(false) => format!("{p} DIFFERS"),
            Err(e) => format!("{p} error: {}", e.trim()),
        })
        .collect::<Vec<_>>()
        .join(", ");
    Outcome { pass, detail }
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let secs = |s: u64| Some(Duration::from_secs(s));
    let criteria: [(&str, Check, Option<Duration>); 8] = [
        ("hsic oracle equivalence", hsic_oracle, secs(5)),
        ("gradient correctness", gradients, secs(60)),
        ("d-separation oracle", d_separation_oracle, secs(60)),
        ("manifold solver sanity", rayleigh, secs(30)),
        ("linear recovery benchmark", || static_benchmark(false), None),
        ("non-linear advantage benchmark", || static_benchmark(true), None),
        ("timeseries pipeline", timeseries, None),
        ("determinism", determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = check();
        let elapsed = t.elapsed();
        let in_time = limit.is_none_or(|l| elapsed < l);
        let pass = outcome.pass && in_time;
        let timing = match limit {
            Some(l) => format!("{:.1} s, limit {} s", elapsed.as_secs_f64(), l.as_secs()),
            None => format!("{:.1} s", elapsed.as_secs_f64()),
        };
        println!(
            "{} {} {name}: {} [{timing}]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail,
        );
        if !pass {
            failed += 1;
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
