//! Simulation grid over strategies, feedback on/off and synthetic profiles,
//! with MCC/F1/explanation-accuracy curves, summaries and plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::explain::explanation_accuracy;
use crate::feedback::{assemble_training_set, MaskLedger, SyntheticSet};
use crate::prefmodel::{train, PreferenceModel};
use crate::sampler::Strategy;
use crate::session::{derive_seed, Answer, InitialSampling, PoolContext, Session, SessionConfig, SessionEvent, Status};
use crate::synthuser::UserProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    /// Label 1 (like) is the positive class.
    pub fn from_labels(truth: &[u8], predicted: &[u8]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::LengthMismatch(truth.len(), predicted.len()));
        }
        if truth.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut c = Confusion::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t != 0, p != 0) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    /// MCC and whether the denominator was zero (value then 0).
    pub fn mcc(&self) -> (f64, bool) {
        let [tp, tn, fp, fn_] = [self.tp, self.tn, self.fp, self.fn_].map(|v| v as f64);
        let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if den == 0.0 {
            (0.0, true)
        } else {
            ((tp * tn - fp * fn_) / den.sqrt(), false)
        }
    }

    /// F1 of the like class; 1.0 when there are no positives at all.
    pub fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / den as f64
        }
    }
}

pub fn mcc(truth: &[u8], predicted: &[u8]) -> Result<f64> {
    Ok(Confusion::from_labels(truth, predicted)?.mcc().0)
}

pub fn f1(truth: &[u8], predicted: &[u8]) -> Result<f64> {
    Ok(Confusion::from_labels(truth, predicted)?.f1())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub mcc: f64,
    pub f1: f64,
    pub explanation_accuracy: f64,
    pub labeled_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub strategies: Vec<Strategy>,
    pub feedback: Vec<bool>,
    pub profiles: Vec<UserProfile>,
    pub session: SessionConfig,
    /// Items per profile used to score explanation accuracy.
    pub probe_size: usize,
    /// Pool and initial-batch sampling for the random baseline.
    pub random_sampling: InitialSampling,
}

impl ExperimentGrid {
    pub fn new(strategies: Vec<Strategy>, profiles: Vec<UserProfile>, session: SessionConfig) -> Self {
        Self {
            strategies,
            feedback: vec![false, true],
            profiles,
            session,
            probe_size: 100,
            random_sampling: InitialSampling::Random,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() || self.feedback.is_empty() || self.profiles.is_empty() {
            return Err(Error::InvalidConfig("experiment grid has an empty axis".into()));
        }
        self.session.validate()
    }

    fn cell_config(&self, strategy: Strategy, feedback: bool) -> SessionConfig {
        SessionConfig {
            strategy,
            feature_feedback: feedback,
            initial_sampling: if strategy == Strategy::Random {
                self.random_sampling
            } else {
                self.session.initial_sampling
            },
            ..self.session.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub strategy: Strategy,
    pub feedback: bool,
    pub profile: String,
}

impl CellKey {
    pub fn file_stem(&self) -> String {
        format!("{}.{}.{}", self.strategy, on_off(self.feedback), self.profile)
    }
}

pub fn on_off(feedback: bool) -> &'static str {
    if feedback {
        "on"
    } else {
        "off"
    }
}

/// Epoch-0 scores of the model trained on the initial labels alone versus
/// the initial labels plus pseudo-labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialScores {
    pub mcc_labeled_only: f64,
    pub mcc_with_pseudo: f64,
    pub pseudo_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    pub initial: Option<InitialScores>,
    pub curve: Vec<CurvePoint>,
    /// Item ids of every issued query batch, in order.
    pub batches: Vec<Vec<String>>,
    pub final_model_hash: Option<String>,
    pub flags: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCurve {
    pub strategy: Strategy,
    pub feedback: bool,
    pub profiles: usize,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<CellResult>,
    pub means: Vec<MeanCurve>,
}

impl GridResult {
    pub fn mean(&self, strategy: Strategy, feedback: bool) -> Option<&MeanCurve> {
        self.means.iter().find(|m| m.strategy == strategy && m.feedback == feedback)
    }

    pub fn cell(&self, strategy: Strategy, feedback: bool, profile: &str) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.key.strategy == strategy && c.key.feedback == feedback && c.key.profile == profile)
    }
}

const TAG_PROBE: u64 = 0x50;

fn scores(model: &PreferenceModel, corpus: &Corpus, eval: &[usize], profile: &UserProfile) -> Result<(f64, f64)> {
    let truth: Vec<u8> = eval.iter().map(|&i| profile.answer_label(corpus.item(i))).collect();
    let pred = eval
        .iter()
        .map(|&i| model.predict_label(corpus.item(i)))
        .collect::<Result<Vec<u8>>>()?;
    let c = Confusion::from_labels(&truth, &pred)?;
    Ok((c.mcc().0, c.f1()))
}

fn probe_accuracy(session: &Session, probe: &[usize], profile: &UserProfile) -> Result<f64> {
    let corpus = &session.context().corpus;
    let mut total = 0.0;
    for &i in probe {
        let got = session.explain(i)?.explanation;
        total += explanation_accuracy(&got, &profile.true_explanation(corpus.item(i)))?;
    }
    Ok(total / probe.len() as f64)
}

/// Runs one synthetic user through a full session.
pub fn run_cell(
    ctx: Arc<PoolContext>,
    config: SessionConfig,
    profile: &UserProfile,
    probe: &[usize],
) -> Result<(CellOutcome, Session)> {
    let corpus = ctx.corpus.clone();
    let mut session = Session::start(ctx, config)?;
    let labels: Vec<(String, u8)> = session
        .pending()
        .iter()
        .map(|&i| (corpus.item(i).id.clone(), profile.answer_label(corpus.item(i))))
        .collect();
    session.submit_initial_labels(&labels)?;

    let eval = session.unlabeled();
    let labeled: Vec<(usize, u8)> = session.labeled().into_iter().collect();
    let baseline = {
        let data = assemble_training_set(
            &corpus,
            &labeled,
            &[],
            &SyntheticSet::default(),
            &MaskLedger::default(),
            session.config().synthetic_weight,
        )?;
        match train(&data, &session.config().train) {
            Ok(m) => m,
            Err(Error::DegenerateLabels) => PreferenceModel::majority_stub(data.dim, &data.mask, data.class_counts()),
            Err(e) => return Err(e),
        }
    };
    let model0 = session.model().expect("trained").clone();
    let initial = InitialScores {
        mcc_labeled_only: scores(&baseline, &corpus, &eval, profile)?.0,
        mcc_with_pseudo: scores(&model0, &corpus, &eval, profile)?.0,
        pseudo_count: session.pseudo_labels().len(),
    };

    let mut curve = Vec::new();
    let feedback = session.config().feature_feedback;
    while session.status() == Status::AwaitingFeedback {
        let answers: Vec<Answer> = session
            .pending()
            .iter()
            .map(|&i| {
                let x = corpus.item(i);
                Answer {
                    item_id: x.id.clone(),
                    label: profile.answer_label(x),
                    feedback: feedback.then(|| profile.answer_feedback(x)),
                }
            })
            .collect();
        session.submit_feedback(&answers)?;
        let model = session.model().expect("trained");
        let eval = session.unlabeled();
        let (mcc, f1) = if eval.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            scores(model, &corpus, &eval, profile)?
        };
        let point = CurvePoint {
            epoch: session.epoch(),
            mcc,
            f1,
            explanation_accuracy: probe_accuracy(&session, probe, profile)?,
            labeled_count: session.labeled().len(),
        };
        session.record_metrics(BTreeMap::from([
            ("mcc".to_string(), point.mcc),
            ("f1".to_string(), point.f1),
            ("explanation_accuracy".to_string(), point.explanation_accuracy),
        ]));
        curve.push(point);
    }
    let batches = session
        .events()
        .iter()
        .filter_map(|e| match e {
            SessionEvent::BatchIssued { items, .. } => Some(items.clone()),
            _ => None,
        })
        .collect();
    Ok((
        CellOutcome {
            initial,
            curve,
            batches,
        },
        session,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub initial: InitialScores,
    pub curve: Vec<CurvePoint>,
    pub batches: Vec<Vec<String>>,
}

/// Fixed explanation-accuracy probe: a seeded subset of the pool.
pub fn probe_set(ctx: &PoolContext, size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<usize> = index::sample(&mut rng, ctx.len(), size.min(ctx.len()))
        .into_iter()
        .map(|p| ctx.pool[p])
        .collect();
    v.sort_unstable();
    v
}

/// Runs every (strategy, feedback, profile) cell. A failing cell is
/// reported in its result and does not stop the grid.
pub fn run_grid(corpus: Arc<Corpus>, grid: &ExperimentGrid) -> Result<GridResult> {
    grid.validate()?;
    let mut contexts: BTreeMap<u8, Arc<PoolContext>> = BTreeMap::new();
    let mode_key = |m: InitialSampling| m as u8;
    for &s in &grid.strategies {
        let cfg = grid.cell_config(s, false);
        if let std::collections::btree_map::Entry::Vacant(e) = contexts.entry(mode_key(cfg.initial_sampling)) {
            e.insert(Arc::new(PoolContext::build(corpus.clone(), &cfg)?));
        }
    }
    let probe_ctx = contexts
        .get(&mode_key(grid.session.initial_sampling))
        .or_else(|| contexts.values().next())
        .expect("at least one context")
        .clone();
    let probes: Vec<Vec<usize>> = (0..grid.profiles.len())
        .map(|p| probe_set(&probe_ctx, grid.probe_size, derive_seed(grid.session.seed, TAG_PROBE + p as u64)))
        .collect();

    let mut jobs = Vec::new();
    for &s in &grid.strategies {
        for &f in &grid.feedback {
            for p in 0..grid.profiles.len() {
                jobs.push((s, f, p));
            }
        }
    }
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|&(s, f, p)| {
            let cfg = grid.cell_config(s, f);
            let ctx = contexts[&mode_key(cfg.initial_sampling)].clone();
            let profile = &grid.profiles[p];
            let key = CellKey {
                strategy: s,
                feedback: f,
                profile: profile.name(),
            };
            match run_cell(ctx, cfg, profile, &probes[p]) {
                Ok((o, session)) => CellResult {
                    key,
                    initial: Some(o.initial),
                    curve: o.curve,
                    batches: o.batches,
                    final_model_hash: session.model().map(|m| m.snapshot_hash()),
                    flags: session.flags().to_vec(),
                    error: None,
                },
                Err(e) => CellResult {
                    key,
                    initial: None,
                    curve: Vec::new(),
                    batches: Vec::new(),
                    final_model_hash: None,
                    flags: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let means = aggregate(&cells);
    Ok(GridResult { cells, means })
}

/// Point-wise means per (strategy, feedback) over successful cells,
/// truncated to the shortest curve.
pub fn aggregate(cells: &[CellResult]) -> Vec<MeanCurve> {
    let mut groups: BTreeMap<(Strategy, bool), Vec<&CellResult>> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.error.is_none() && !c.curve.is_empty()) {
        groups.entry((c.key.strategy, c.key.feedback)).or_default().push(c);
    }
    groups
        .into_iter()
        .map(|((strategy, feedback), cs)| {
            let len = cs.iter().map(|c| c.curve.len()).min().unwrap_or(0);
            let n = cs.len() as f64;
            let points = (0..len)
                .map(|t| {
                    let mean = |f: fn(&CurvePoint) -> f64| cs.iter().map(|c| f(&c.curve[t])).sum::<f64>() / n;
                    CurvePoint {
                        epoch: cs[0].curve[t].epoch,
                        mcc: mean(|p| p.mcc),
                        f1: mean(|p| p.f1),
                        explanation_accuracy: mean(|p| p.explanation_accuracy),
                        labeled_count: mean(|p| p.labeled_count as f64).round() as usize,
                    }
                })
                .collect();
            MeanCurve {
                strategy,
                feedback,
                profiles: cs.len(),
                points,
            }
        })
        .collect()
}

/// Mean initial scores over successful cells of the given strategy.
pub fn mean_initial(cells: &[CellResult], strategy: Strategy, feedback: bool) -> Option<InitialScores> {
    let v: Vec<InitialScores> = cells
        .iter()
        .filter(|c| c.key.strategy == strategy && c.key.feedback == feedback)
        .filter_map(|c| c.initial)
        .collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    Some(InitialScores {
        mcc_labeled_only: v.iter().map(|s| s.mcc_labeled_only).sum::<f64>() / n,
        mcc_with_pseudo: v.iter().map(|s| s.mcc_with_pseudo).sum::<f64>() / n,
        pseudo_count: (v.iter().map(|s| s.pseudo_count).sum::<usize>() as f64 / n).round() as usize,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateSweepRow {
    pub gate: f64,
    pub scores: InitialScores,
}

/// Epoch-0 scores with and without pseudo-labels for each entropy gate,
/// averaged over `profiles`. Only the initial labeling round is run.
pub fn gate_sweep(
    corpus: Arc<Corpus>,
    base: &SessionConfig,
    profiles: &[UserProfile],
    gates: &[f64],
) -> Result<Vec<GateSweepRow>> {
    if profiles.is_empty() || gates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let base = SessionConfig {
        elicitation_epochs: 0,
        recommendation_epochs: 0,
        ..base.clone()
    };
    base.validate()?;
    let ctx = Arc::new(PoolContext::build(corpus, &base)?);
    gates
        .iter()
        .map(|&gate| {
            let config = SessionConfig {
                entropy_gate: gate,
                ..base.clone()
            };
            config.validate()?;
            let initial: Vec<InitialScores> = profiles
                .par_iter()
                .map(|p| run_cell(ctx.clone(), config.clone(), p, &[]).map(|(o, _)| o.initial))
                .collect::<Result<_>>()?;
            let n = initial.len() as f64;
            Ok(GateSweepRow {
                gate,
                scores: InitialScores {
                    mcc_labeled_only: initial.iter().map(|s| s.mcc_labeled_only).sum::<f64>() / n,
                    mcc_with_pseudo: initial.iter().map(|s| s.mcc_with_pseudo).sum::<f64>() / n,
                    pseudo_count: (initial.iter().map(|s| s.pseudo_count).sum::<usize>() as f64 / n).round() as usize,
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub gap: f64,
    /// False when the candidate never reached the target; `gap` is then the
    /// bound `at - last epoch`.
    pub reached: bool,
}

fn interpolate(curve: &[(f64, f64)], at: f64) -> Option<f64> {
    let first = curve.first()?;
    if at < first.0 || at > curve.last()?.0 {
        return None;
    }
    for w in curve.windows(2) {
        let ((e0, v0), (e1, v1)) = (w[0], w[1]);
        if at <= e1 {
            return Some(if e1 == e0 { v1 } else { v0 + (at - e0) / (e1 - e0) * (v1 - v0) });
        }
    }
    Some(first.1)
}

/// Epochs by which `candidate` precedes `reference`: the reference value at
/// `at` is located on `candidate` by linear interpolation, and the gap is
/// `at` minus that epoch.
pub fn horizontal_gap(reference: &[(f64, f64)], candidate: &[(f64, f64)], at: f64) -> Result<Gap> {
    if candidate.is_empty() {
        return Err(Error::EmptyInput);
    }
    let target = interpolate(reference, at)
        .ok_or_else(|| Error::InvalidConfig(format!("epoch {at} outside the reference curve")))?;
    if candidate[0].1 >= target {
        return Ok(Gap {
            gap: at - candidate[0].0,
            reached: true,
        });
    }
    for w in candidate.windows(2) {
        let ((e0, v0), (e1, v1)) = (w[0], w[1]);
        if v0 < target && v1 >= target {
            let e = e0 + (target - v0) / (v1 - v0) * (e1 - e0);
            return Ok(Gap { gap: at - e, reached: true });
        }
    }
    Ok(Gap {
        gap: at - candidate.last().expect("non-empty").0,
        reached: false,
    })
}

pub fn mcc_series(points: &[CurvePoint]) -> Vec<(f64, f64)> {
    points.iter().map(|p| (p.epoch as f64, p.mcc)).collect()
}

pub const CURVE_HEADER: [&str; 5] = ["epoch", "mcc", "f1", "expl_acc", "labeled_count"];

pub fn write_curve_csv(points: &[CurvePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(CURVE_HEADER).map_err(err)?;
    for p in points {
        w.write_record([
            p.epoch.to_string(),
            format!("{:.6}", p.mcc),
            format!("{:.6}", p.f1),
            format!("{:.6}", p.explanation_accuracy),
            p.labeled_count.to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_curve_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if header.iter().ne(CURVE_HEADER) {
        return Err(Error::Parse(format!("unexpected curve header {header:?}")));
    }
    let mut out = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let bad = |field: &str| Error::MalformedRecord {
            line: n + 2,
            message: format!("bad `{field}`"),
        };
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(CURVE_HEADER[i]));
        out.push(CurvePoint {
            epoch: rec[0].parse().map_err(|_| bad("epoch"))?,
            mcc: num(1)?,
            f1: num(2)?,
            explanation_accuracy: num(3)?,
            labeled_count: rec[4].parse().map_err(|_| bad("labeled_count"))?,
        });
    }
    Ok(out)
}

/// Writes per-cell and mean curves plus `summary.md` and `summary.json`.
pub fn write_grid_outputs(dir: &Path, result: &GridResult, gap_epochs: &[usize]) -> Result<()> {
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    let write = |p: &Path, s: &str| std::fs::write(p, s).map_err(|e| Error::io(p, e));
    let curves = dir.join("curves");
    let means = dir.join("means");
    mkdir(&curves)?;
    mkdir(&means)?;
    for c in &result.cells {
        if c.error.is_none() {
            write(&curves.join(format!("{}.csv", c.key.file_stem())), &write_curve_csv(&c.curve)?)?;
        }
    }
    for m in &result.means {
        write(
            &means.join(format!("{}.{}.csv", m.strategy, on_off(m.feedback))),
            &write_curve_csv(&m.points)?,
        )?;
    }
    write(&dir.join("summary.md"), &render_summary(result, gap_epochs))?;
    let json = serde_json::to_string_pretty(result).map_err(|e| Error::Parse(e.to_string()))?;
    write(&dir.join("summary.json"), &json)
}

/// Loads `means/<strategy>.<on|off>.csv` files written by a grid run.
pub fn load_mean_curves(dir: &Path) -> Result<Vec<MeanCurve>> {
    let means = dir.join("means");
    let mut out = Vec::new();
    let entries = std::fs::read_dir(&means).map_err(|e| Error::io(&means, e))?;
    let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        let Some(stem) = p.file_stem().and_then(|s| s.to_str()) else { continue };
        let Some((s, f)) = stem.split_once('.') else { continue };
        let (Ok(strategy), Some(feedback)) = (s.parse::<Strategy>(), match f {
            "on" => Some(true),
            "off" => Some(false),
            _ => None,
        }) else {
            continue;
        };
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        out.push(MeanCurve {
            strategy,
            feedback,
            profiles: 0,
            points: read_curve_csv(&text)?,
        });
    }
    Ok(out)
}

fn fmt_pct(v: f64, base: f64) -> String {
    if base.abs() < 1e-12 {
        "n/a".into()
    } else {
        format!("{:+.1}%", 100.0 * (v - base) / base.abs())
    }
}

/// Markdown tables: final-epoch scores with change over random, and
/// horizontal gaps to random at the requested epochs.
pub fn render_tables(means: &[MeanCurve], gap_epochs: &[usize]) -> String {
    let mut s = String::new();
    let find = |st: Strategy, f: bool| means.iter().find(|m| m.strategy == st && m.feedback == f);
    for feedback in [false, true] {
        let rows: Vec<&MeanCurve> = means.iter().filter(|m| m.feedback == feedback).collect();
        if rows.is_empty() {
            continue;
        }
        let random = find(Strategy::Random, feedback).and_then(|m| m.points.last());
        let _ = writeln!(s, "### Final epoch, feedback {}\n", on_off(feedback));
        let _ = writeln!(s, "| strategy | epoch | MCC | vs random | F1 | explanation accuracy |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for m in &rows {
            if let Some(p) = m.points.last() {
                let rel = random.map_or("n/a".into(), |r| fmt_pct(p.mcc, r.mcc));
                let _ = writeln!(
                    s,
                    "| {} | {} | {:.4} | {} | {:.4} | {:.4} |",
                    m.strategy, p.epoch, p.mcc, rel, p.f1, p.explanation_accuracy
                );
            }
        }
        s.push('\n');
        if let Some(r) = find(Strategy::Random, feedback) {
            let reference = mcc_series(&r.points);
            let _ = writeln!(s, "### Epochs saved over random (MCC), feedback {}\n", on_off(feedback));
            let _ = write!(s, "| strategy |");
            for e in gap_epochs {
                let _ = write!(s, " t={e} |");
            }
            let _ = write!(s, "\n|---|");
            for _ in gap_epochs {
                s.push_str("---|");
            }
            s.push('\n');
            for m in rows.iter().filter(|m| m.strategy != Strategy::Random) {
                let _ = write!(s, "| {} |", m.strategy);
                let cand = mcc_series(&m.points);
                for &e in gap_epochs {
                    match horizontal_gap(&reference, &cand, e as f64) {
                        Ok(g) if g.reached => {
                            let _ = write!(s, " {:.2} |", g.gap);
                        }
                        Ok(g) => {
                            let _ = write!(s, " <={:.2} |", g.gap);
                        }
                        Err(_) => s.push_str(" - |"),
                    }
                }
                s.push('\n');
            }
            s.push('\n');
        }
    }
    s
}

pub fn render_summary(result: &GridResult, gap_epochs: &[usize]) -> String {
    let mut s = String::from("# Simulation summary\n\n");
    let failed: Vec<&CellResult> = result.cells.iter().filter(|c| c.error.is_some()).collect();
    let _ = writeln!(
        s,
        "cells: {} ({} failed)\n",
        result.cells.len(),
        failed.len()
    );
    for c in &failed {
        let _ = writeln!(s, "- failed {}: {}", c.key.file_stem(), c.error.as_deref().unwrap_or(""));
    }
    let mut strategies: Vec<Strategy> = result.cells.iter().map(|c| c.key.strategy).collect();
    strategies.sort();
    strategies.dedup();
    let _ = writeln!(s, "### Initial model (epoch 0)\n");
    let _ = writeln!(s, "| strategy | MCC labels only | MCC labels + pseudo | pseudo-labels |");
    let _ = writeln!(s, "|---|---|---|---|");
    for st in strategies {
        if let Some(i) = mean_initial(&result.cells, st, false).or_else(|| mean_initial(&result.cells, st, true)) {
            let _ = writeln!(
                s,
                "| {} | {:.4} | {:.4} | {} |",
                st, i.mcc_labeled_only, i.mcc_with_pseudo, i.pseudo_count
            );
        }
    }
    s.push('\n');
    s.push_str(&render_tables(&result.means, gap_epochs));
    s
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f", "#17becf", "#8c564b"];

/// A plain SVG line chart; each series is `(label, points)`.
pub fn svg_line_chart(title: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 150.0, 40.0, 50.0);
    let all = series.iter().flat_map(|(_, p)| p.iter()).filter(|p| p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, xml_escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let v = y0 + (y1 - y0) * k as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
        let xv = x0 + (x1 - x0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{xv:.0}</text>"#,
            sx(xv),
            top + ph + 18.0
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        xml_escape(y_label)
    );
    for (k, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        let ly = top + 16.0 * k as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            left + pw + 10.0,
            left + pw + 30.0,
            left + pw + 35.0,
            ly + 4.0,
            xml_escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
