use std::path::{Path, PathBuf};

use adpomdp_core::agents::AgentKind;
use adpomdp_core::env::{ACTION_NAMES, FEATURE_NAMES, N_ACTIONS};
use adpomdp_core::hmm::ModelParams;
use adpomdp_core::Error as CoreError;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Marginalization};
use crate::error::{HarnessError, Result};
use crate::evaluate::{eval_log_path, EvalLog};
use crate::fit::load_model;
use crate::io::{self, fmt, stream, stream_rng};

pub const INTERPRET_DIR: &str = "interpret";
const POWER_ITERS: usize = 10_000;
const POWER_TOL: f64 = 1e-14;

/// Action weights used to marginalize action-conditioned statistics.
pub fn action_weights(mode: Marginalization, logs: &[EvalLog]) -> Vec<f64> {
    let mut w = vec![0.0; N_ACTIONS];
    if mode == Marginalization::Empirical {
        // step 0 carries a placeholder action, so only real decisions count
        for l in logs {
            for s in &l.trajectory.steps[1..] {
                w[s.action] += 1.0;
            }
        }
    }
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        return vec![1.0 / N_ACTIONS as f64; N_ACTIONS];
    }
    w.iter().map(|x| x / total).collect()
}

/// `table[s][g] = sum_a w_a * sum_m O_g(m | s, a) * m`: the expected symbol
/// of every observation dimension in every state.
pub fn expectation_table(model: &ModelParams, weights: &[f64]) -> Vec<Vec<f64>> {
    (0..model.n_states)
        .map(|s| {
            model
                .emission
                .iter()
                .map(|eg| {
                    weights
                        .iter()
                        .enumerate()
                        .map(|(a, w)| w * eg[a][s].iter().enumerate().map(|(m, p)| p * m as f64).sum::<f64>())
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// `T(s' | s) = sum_a w_a T(s' | s, a)`.
pub fn marginal_transition(model: &ModelParams, weights: &[f64]) -> Vec<Vec<f64>> {
    let n = model.n_states;
    let mut t = vec![vec![0.0; n]; n];
    for (a, w) in weights.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                t[i][j] += w * model.transition[a][i][j];
            }
        }
    }
    t
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Sample mean and (population) covariance matrix.
pub fn covariance(points: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = points[0].len();
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x / n;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for p in points {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]) / n;
            }
        }
    }
    (mean, cov)
}

/// Leading `k` eigenpairs of a symmetric positive semi-definite matrix by
/// power iteration with deflation; start vectors come from `rng`.
pub fn top_eigenvectors<R: Rng + ?Sized>(mat: &[Vec<f64>], k: usize, rng: &mut R) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = mat.len();
    let mut a: Vec<Vec<f64>> = mat.to_vec();
    let mut values = Vec::new();
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    for _ in 0..k.min(d) {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        normalize(&mut v);
        let mut lambda = 0.0;
        for _ in 0..POWER_ITERS {
            let mut w: Vec<f64> = a.iter().map(|row| dot(row, &v)).collect();
            // keep orthogonal to earlier vectors against round-off
            for u in &vectors {
                let c = dot(&w, u);
                w.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
            }
            let norm = normalize(&mut w);
            if norm == 0.0 {
                // null space: any unit vector orthogonal to the others
                lambda = 0.0;
                v = orthogonal_unit(&vectors, d);
                break;
            }
            lambda = norm;
            let diff: f64 = w.iter().zip(&v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            v = w;
            if diff < POWER_TOL {
                break;
            }
        }
        // deterministic sign: largest-magnitude component positive
        let big = v.iter().cloned().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..d {
            for j in 0..d {
                a[i][j] -= lambda * v[i] * v[j];
            }
        }
        values.push(lambda);
        vectors.push(v);
    }
    (values, vectors)
}

fn orthogonal_unit(vectors: &[Vec<f64>], d: usize) -> Vec<f64> {
    for e in 0..d {
        let mut v = vec![0.0; d];
        v[e] = 1.0;
        for u in vectors {
            let c = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
        if normalize(&mut v) > 1e-8 {
            return v;
        }
    }
    vec![0.0; d]
}

/// Principal-component projection of `points` onto the top two directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
    pub coords: Vec<[f64; 2]>,
}

pub fn project_2d<R: Rng + ?Sized>(points: &[Vec<f64>], rng: &mut R) -> Projection {
    let (mean, cov) = covariance(points);
    let (variances, mut components) = top_eigenvectors(&cov, 2, rng);
    while components.len() < 2 {
        let d = mean.len();
        components.push(vec![0.0; d]);
    }
    let coords = points
        .iter()
        .map(|p| {
            let c: Vec<f64> = p.iter().zip(&mean).map(|(x, m)| x - m).collect();
            [dot(&c, &components[0]), dot(&c, &components[1])]
        })
        .collect();
    Projection {
        mean,
        components,
        variances,
        coords,
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; the lowest index wins ties.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(point, cen);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Lloyd's k-means. Centroids start at `k` distinct data points chosen by
/// `rng` (duplicates only when fewer than `k` distinct points exist); an
/// empty cluster keeps its centroid.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    max_iters: usize,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if points.len() < k {
        return Err(HarnessError::Core(CoreError::SizeLimit(format!(
            "{} points cannot form {k} clusters",
            points.len()
        ))));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(rng);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    for &i in &order {
        if centroids.len() == k {
            break;
        }
        if !centroids.iter().any(|c| c == &points[i]) {
            centroids.push(points[i].clone());
        }
    }
    for &i in &order {
        if centroids.len() == k {
            break;
        }
        centroids.push(points[i].clone());
    }

    let d = points[0].len();
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok((centroids, assign))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub size: usize,
    pub dominant_state: Option<usize>,
    /// Share of the cluster's points whose hidden state is the dominant one.
    pub purity: f64,
    /// Mean reward of the step that follows each point (points at the last
    /// step of an episode are excluded).
    pub mean_reward: f64,
}

/// Per-cluster summaries and the overall purity
/// `sum_c max_s |c ∩ s| / n`.
pub fn cluster_purity(
    assign: &[usize],
    labels: &[usize],
    rewards: &[Option<f64>],
    k: usize,
    n_labels: usize,
) -> (Vec<ClusterSummary>, f64) {
    let mut counts = vec![vec![0usize; n_labels]; k];
    let mut reward_sum = vec![0.0; k];
    let mut reward_n = vec![0usize; k];
    for ((&c, &l), r) in assign.iter().zip(labels).zip(rewards) {
        counts[c][l] += 1;
        if let Some(r) = r {
            reward_sum[c] += r;
            reward_n[c] += 1;
        }
    }
    let mut dominant_total = 0;
    let summaries = (0..k)
        .map(|c| {
            let size: usize = counts[c].iter().sum();
            let (dom, max) = counts[c]
                .iter()
                .enumerate()
                .fold((None, 0), |(bi, bm), (i, &n)| if n > bm { (Some(i), n) } else { (bi, bm) });
            dominant_total += max;
            ClusterSummary {
                cluster: c,
                size,
                dominant_state: dom,
                purity: if size > 0 { max as f64 / size as f64 } else { f64::NAN },
                mean_reward: if reward_n[c] > 0 { reward_sum[c] / reward_n[c] as f64 } else { f64::NAN },
            }
        })
        .collect();
    let n = assign.len();
    (summaries, if n > 0 { dominant_total as f64 / n as f64 } else { f64::NAN })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretReport {
    pub source_agent: AgentKind,
    pub marginalization: Marginalization,
    pub action_weights: Vec<f64>,
    pub expectation: Vec<Vec<f64>>,
    pub transition: Vec<Vec<f64>>,
    pub b0: Vec<f64>,
    pub n_points: usize,
    pub components: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
    pub clusters: Vec<ClusterSummary>,
    pub purity: f64,
}

pub fn interpret_dir(out: &Path) -> PathBuf {
    out.join(INTERPRET_DIR)
}

/// Belief points with their hidden labels and following rewards.
pub struct BeliefPoints {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub rewards: Vec<Option<f64>>,
    pub index: Vec<(usize, usize)>,
}

pub fn collect_points(logs: &[EvalLog]) -> BeliefPoints {
    let mut bp = BeliefPoints {
        points: Vec::new(),
        labels: Vec::new(),
        rewards: Vec::new(),
        index: Vec::new(),
    };
    for l in logs {
        for (t, b) in l.beliefs.iter().enumerate() {
            bp.points.push(b.clone());
            bp.labels.push(l.states[t]);
            bp.rewards.push(l.trajectory.steps.get(t + 1).map(|s| s.reward));
            bp.index.push((l.episode, t));
        }
    }
    bp
}

/// Analyses a model and belief logs; pure apart from the seeded rng.
pub fn interpret(
    model: &ModelParams,
    logs: &[EvalLog],
    source_agent: AgentKind,
    mode: Marginalization,
    kmeans_iters: usize,
    seed: u64,
) -> Result<(InterpretReport, BeliefPoints, Projection, Vec<usize>)> {
    let weights = action_weights(mode, logs);
    let bp = collect_points(logs);
    let k = model.n_states;
    if bp.points.len() < k {
        return Err(HarnessError::Core(CoreError::SizeLimit(format!(
            "{} belief points cannot form {k} clusters",
            bp.points.len()
        ))));
    }
    let mut rng = stream_rng(seed, stream::INTERPRET);
    let proj = project_2d(&bp.points, &mut rng);
    let coords: Vec<Vec<f64>> = proj.coords.iter().map(|c| c.to_vec()).collect();
    let (_, assign) = kmeans(&coords, k, kmeans_iters, &mut rng)?;
    let n_labels = bp.labels.iter().copied().max().map_or(1, |m| m + 1);
    let (clusters, purity) = cluster_purity(&assign, &bp.labels, &bp.rewards, k, n_labels);
    let report = InterpretReport {
        source_agent,
        marginalization: mode,
        action_weights: weights.clone(),
        expectation: expectation_table(model, &weights),
        transition: marginal_transition(model, &weights),
        b0: model.b0.clone(),
        n_points: bp.points.len(),
        components: proj.components.clone(),
        variances: proj.variances.clone(),
        clusters,
        purity,
    };
    Ok((report, bp, proj, assign))
}

/// Reads the belief log of the first belief-based agent that has one
/// (DISA before EM-Q).
pub fn load_belief_logs(out: &Path) -> Result<(AgentKind, Vec<EvalLog>)> {
    for kind in [AgentKind::Disa, AgentKind::EmQ] {
        let p = eval_log_path(out, kind);
        if p.exists() {
            return Ok((kind, io::read_jsonl(&p)?));
        }
    }
    Err(HarnessError::Missing(format!(
        "belief logs in {} (evaluate a disa or em_q agent first)",
        out.join(crate::evaluate::EVAL_DIR).display()
    )))
}

pub fn cmd_interpret(cfg: &ExperimentConfig) -> Result<InterpretReport> {
    let out = cfg.out_path();
    let model = load_model(&out)?;
    let (kind, logs) = load_belief_logs(&out)?;
    let (report, bp, proj, assign) = interpret(&model, &logs, kind, cfg.marginalization, cfg.kmeans_iters, cfg.seed)?;
    write_report(&interpret_dir(&out), &report, &bp, &proj, &assign)?;
    Ok(report)
}

fn write_report(
    dir: &Path,
    report: &InterpretReport,
    bp: &BeliefPoints,
    proj: &Projection,
    assign: &[usize],
) -> Result<()> {
    io::ensure_dir(dir)?;
    let weights_note = format!(
        "# action weights ({:?}): {}",
        report.marginalization,
        ACTION_NAMES
            .iter()
            .zip(&report.action_weights)
            .map(|(n, w)| format!("{n}={w}"))
            .collect::<Vec<_>>()
            .join(" ")
    )
    .to_lowercase();

    let mut header = vec!["state".to_string()];
    header.extend(FEATURE_NAMES.iter().take(report.expectation[0].len()).map(|s| s.to_string()));
    write_csv_with_note(
        &dir.join("expectation.csv"),
        &weights_note,
        &header,
        report.expectation.iter().enumerate().map(|(s, row)| {
            std::iter::once(s.to_string()).chain(row.iter().map(|x| fmt(*x))).collect()
        }),
    )?;
    let n = report.transition.len();
    let mut header = vec!["from".to_string()];
    header.extend((0..n).map(|j| format!("to_{j}")));
    write_csv_with_note(
        &dir.join("transition.csv"),
        &weights_note,
        &header,
        report.transition.iter().enumerate().map(|(s, row)| {
            std::iter::once(s.to_string()).chain(row.iter().map(|x| fmt(*x))).collect()
        }),
    )?;
    io::write_csv(
        &dir.join("b0.csv"),
        &["state", "probability"],
        report.b0.iter().enumerate().map(|(s, p)| vec![s.to_string(), fmt(*p)]),
    )?;
    let d = bp.points.first().map_or(0, |p| p.len());
    let mut header: Vec<String> = ["episode", "t", "pc1", "pc2", "cluster", "hidden_state"].map(String::from).to_vec();
    header.extend((0..d).map(|i| format!("b{i}")));
    io::write_csv(
        &dir.join("projection.csv"),
        &header,
        (0..bp.points.len()).map(|i| {
            let (ep, t) = bp.index[i];
            let mut row = vec![
                ep.to_string(),
                t.to_string(),
                fmt(proj.coords[i][0]),
                fmt(proj.coords[i][1]),
                assign[i].to_string(),
                bp.labels[i].to_string(),
            ];
            row.extend(bp.points[i].iter().map(|x| fmt(*x)));
            row
        }),
    )?;
    io::write_csv(
        &dir.join("clusters.csv"),
        &["cluster", "size", "dominant_state", "purity", "mean_reward"],
        report.clusters.iter().map(|c| {
            vec![
                c.cluster.to_string(),
                c.size.to_string(),
                c.dominant_state.map_or(String::new(), |s| s.to_string()),
                fmt(c.purity),
                fmt(c.mean_reward),
            ]
        }),
    )?;
    io::write_json(&dir.join("report.json"), report)?;
    io::atomic_write(&dir.join("plot.gp"), GNUPLOT.as_bytes())
}

fn write_csv_with_note<I>(path: &Path, note: &str, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let body = w.into_inner().map_err(|e| HarnessError::Csv(e.into_error().into()))?;
    let mut bytes = format!("{note}\n").into_bytes();
    bytes.extend(body);
    io::atomic_write(path, &bytes)
}

const GNUPLOT: &str = r#"# gnuplot -p plot.gp  (run inside the interpret directory)
set datafile separator ","
set key outside
set title "belief projection by cluster"
set xlabel "pc1"
set ylabel "pc2"
plot for [c=0:9] "projection.csv" skip 1 using ($5==c ? $3 : 1/0):4 with points pt 7 ps 0.4 title sprintf("cluster %d", c)
pause -1
set title "belief projection by hidden state"
plot for [s=0:9] "projection.csv" skip 1 using ($6==s ? $3 : 1/0):4 with points pt 7 ps 0.4 title sprintf("state %d", s)
pause -1
set title "training reward per epoch"
set xlabel "episodes"
set ylabel "mean reward"
plot for [f in "disa em_q tabular_q bandit manual"] "../agents/".f."_curve.csv" skip 1 using 2:4 with lines title f
"#;
