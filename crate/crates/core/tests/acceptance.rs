//! Acceptance suite. Runs every criterion in order, prints one
//! `PASS`/`FAIL` line per criterion and fails if any criterion fails.
//!
//! Criteria 5, 6, 7 and 10 train on MUTAG and ENZYMES read from
//! `$DATASET_DIR/MUTAG` and `$DATASET_DIR/ENZYMES` (TUDataset layout).

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use graphout::cli::{self, ExperimentConfig, ResultRow};
use graphout::graph::tud::{parse_tudataset, write_tudataset, FeatureLayout};
use graphout::graph::zinc::{load_zinc_subset, write_zinc_subset};
use graphout::graph::{batch, GraphBatch, Target};
use graphout::layers::{ConvKind, ConvLayer, Ctx, Linear};
use graphout::model::ModelSpec;
use graphout::readout::{PredictionEnsemble, Readout, ReadoutKind, ReadoutOutput, ReadoutSpec};
use graphout::rng::{stream, Stream};
use graphout::tensor::{BatchNormStats, ParamStore, ReduceKind, Tape, Tensor, Var};
use rand::Rng as _;

type Outcome = Result<String, String>;

/// Prints straight to stdout so the lines survive test output capture.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took <= limit, || format!("{what} took {took:.1?}, limit {limit:?}"))
}

// ---------------------------------------------------------------- 1

const H: f64 = 1e-6;
const REL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-3;

fn random_tensor(shape: &[usize], rng: &mut graphout::rng::Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

type Build = dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>;
type OpCase = (&'static str, Vec<Vec<usize>>, Box<Build>);

/// Worst relative gap for a scalar-valued op graph over all input coordinates.
fn op_gradcheck(inputs: &[Tensor], build: &Build) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let grads = tape.backward(build(&tape, &vars)).unwrap();
    let eval = |xs: &[Tensor]| {
        let t = Tape::new();
        let vs: Vec<Var<'_>> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        build(&t, &vs).value().data()[0]
    };
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape().to_vec()));
        for i in 0..inputs[k].numel() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += H;
            let plus = eval(&xs);
            xs[k].data_mut()[i] -= 2.0 * H;
            let minus = eval(&xs);
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR));
        }
    }
    worst
}

/// `sum(x * w)` for a fixed random `w`, turning any output into a scalar.
fn project<'t>(t: &'t Tape, x: Var<'t>, seed: u64) -> Var<'t> {
    let w = random_tensor(&x.shape(), &mut stream(seed, Stream::Data));
    x.mul(t.constant(w)).unwrap().sum().unwrap()
}

fn op_cases() -> Vec<OpCase> {
    let seg: Arc<[usize]> = Arc::from(vec![0, 0, 1, 1, 1, 3]);
    let gather: Arc<[usize]> = Arc::from(vec![5, 0, 0, 2, 4]);
    let padded: Arc<[Option<usize>]> = Arc::from(vec![Some(1), None, Some(3), Some(1)]);
    let mut cases: Vec<OpCase> = vec![
        ("add", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| project(t, v[0].add(v[1]).unwrap(), 1))),
        ("add (row broadcast)", vec![vec![3, 4], vec![4]], Box::new(|t, v| project(t, v[0].add(v[1]).unwrap(), 2))),
        ("sub", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| project(t, v[0].sub(v[1]).unwrap(), 3))),
        ("mul", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| project(t, v[0].mul(v[1]).unwrap(), 4))),
        ("relu", vec![vec![3, 4]], Box::new(|t, v| project(t, v[0].relu().unwrap(), 5))),
        ("leaky_relu", vec![vec![3, 4]], Box::new(|t, v| project(t, v[0].leaky_relu(0.2).unwrap(), 6))),
        ("sigmoid", vec![vec![3, 4]], Box::new(|t, v| project(t, v[0].sigmoid().unwrap(), 7))),
        ("tanh", vec![vec![3, 4]], Box::new(|t, v| project(t, v[0].tanh().unwrap(), 8))),
        ("scale", vec![vec![3, 4]], Box::new(|t, v| project(t, v[0].scale(-2.5).unwrap(), 9))),
        ("matmul", vec![vec![3, 4], vec![4, 2]], Box::new(|t, v| project(t, v[0].matmul(v[1]).unwrap(), 10))),
        ("reshape", vec![vec![3, 4]], Box::new(|t, v| project(t, v[0].reshape([2, 6]).unwrap(), 11))),
        ("row_softmax", vec![vec![3, 4]], Box::new(|t, v| project(t, v[0].row_softmax().unwrap(), 12))),
        ("sum", vec![vec![3, 4]], Box::new(|_, v| v[0].sum().unwrap())),
        (
            "concat_cols",
            vec![vec![3, 2], vec![3, 4]],
            Box::new(|t, v| project(t, t.concat_cols(&[v[0], v[1]]).unwrap(), 13)),
        ),
        (
            "batch_norm",
            vec![vec![5, 3], vec![3], vec![3]],
            Box::new(|t, v| {
                let mut stats = BatchNormStats::new(3);
                project(t, v[0].batch_norm(v[1], v[2], &mut stats, true).unwrap(), 14)
            }),
        ),
        (
            "dropout",
            vec![vec![4, 5]],
            Box::new(|t, v| project(t, v[0].dropout(0.4, true, &mut stream(15, Stream::Dropout)).unwrap(), 15)),
        ),
        ("cross_entropy", vec![vec![4, 3]], Box::new(|_, v| v[0].cross_entropy(&[2, 0, 1, 1]).unwrap())),
        ("mse", vec![vec![4, 1]], Box::new(|_, v| v[0].mse(&[0.3, -1.0, 2.0, 0.0]).unwrap())),
    ];
    for (name, kind) in [
        ("segment_sum", ReduceKind::Sum),
        ("segment_mean", ReduceKind::Mean),
        ("segment_max", ReduceKind::Max),
    ] {
        let seg = seg.clone();
        cases.push((
            name,
            vec![vec![6, 3]],
            Box::new(move |t, v| project(t, v[0].segment_reduce(kind, &seg, 4).unwrap(), 16)),
        ));
    }
    let s = seg.clone();
    cases.push((
        "segment_softmax",
        vec![vec![6, 1]],
        Box::new(move |t, v| project(t, v[0].segment_softmax(&s).unwrap(), 17)),
    ));
    cases.push((
        "gather_rows",
        vec![vec![6, 3]],
        Box::new(move |t, v| project(t, v[0].gather_rows(&gather).unwrap(), 18)),
    ));
    cases.push((
        "gather_rows_padded",
        vec![vec![4, 3]],
        Box::new(move |t, v| project(t, v[0].gather_rows_padded(&padded).unwrap(), 19)),
    ));
    cases
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(100, Stream::Data);
    let mut op_worst: f64 = 0.0;
    let cases = op_cases();
    for (name, shapes, build) in &cases {
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random_tensor(s, &mut rng)).collect();
        let w = op_gradcheck(&inputs, build.as_ref());
        ensure(w <= REL, || format!("op {name}: relative error {w:e}"))?;
        op_worst = op_worst.max(w);
    }

    let graphs: Vec<_> = (0..4)
        .map(|i| random_graph(&mut rng, 2, 10, 3, 0.35, Target::Class(i % 2)))
        .collect();
    let mut model_worst: f64 = 0.0;
    let mut configs = 0;
    for conv in ConvKind::ALL {
        for kind in ReadoutKind::ALL {
            let spec = ModelSpec::new(conv, kind, 3, 8, 8, 2).with_layers(2).with_n_max(11);
            let model = build_model(spec, 101);
            let prepared = model.prepare(&graphs);
            let b = GraphBatch::new(prepared.iter()).unwrap();
            let (w, at) = model_gradcheck(&model, &b, 102, 6, FLOOR);
            ensure(w <= REL, || format!("{conv}/{kind}: relative error {w:e} at {at}"))?;
            model_worst = model_worst.max(w);
            configs += 1;
        }
    }
    within(Duration::from_secs(120), start, "gradient suite")?;
    Ok(format!(
        "{} ops worst {op_worst:.1e}, {configs} model configs worst {model_worst:.1e}, {:.1?}",
        cases.len(),
        start.elapsed()
    ))
}

// ---------------------------------------------------------------- 2

fn invariance_suite() -> Outcome {
    let start = Instant::now();
    let graphs = random_graphs(200, 50, 10, 3);
    let mut rng = stream(201, Stream::Data);
    let mut worst_invariant: f64 = 0.0;
    for conv in ConvKind::ALL {
        for kind in ReadoutKind::ALL {
            let spec = ModelSpec::new(conv, kind, 3, 8, 8, 2).with_layers(2).with_n_max(11);
            let model = build_model(spec, 202);
            let gap = graphs.iter().map(|g| relabeling_gap(&model, g, 20, &mut rng)).fold(0.0, f64::max);
            if kind.is_permutation_invariant() {
                ensure(gap <= 1e-7, || format!("{conv}/{kind}: output moved by {gap:e}"))?;
                worst_invariant = worst_invariant.max(gap);
            } else {
                ensure(gap > 1e-6, || format!("{conv}/{kind}: no order witness, max gap {gap:e}"))?;
            }
        }
    }
    within(Duration::from_secs(60), start, "invariance suite")?;
    Ok(format!("worst invariant gap {worst_invariant:.1e}, dense and gru witnessed, {:.1?}", start.elapsed()))
}

// ---------------------------------------------------------------- 3

fn readout_values(kind: ReadoutKind, bases: Option<Vec<ReadoutKind>>, b: &GraphBatch, d: usize) -> Tensor {
    let mut spec = ReadoutSpec::new(kind, d, d);
    if let Some(k) = bases {
        spec = spec.with_base_kinds(k);
    }
    let mut store = ParamStore::new();
    let r = Readout::new(&spec, &mut store, &mut stream(300, Stream::Init)).unwrap();
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, &store);
    match r.forward(&ctx, tape.constant(b.features().clone()), b).unwrap() {
        ReadoutOutput::Single(v) => v.value(),
        ReadoutOutput::PerReadout(_) => panic!("{kind} is not a representation readout"),
    }
}

fn ensemble_identities() -> Outcome {
    let d = 6;
    let b = batch(&random_graphs(301, 9, 10, d)).unwrap();
    let tape = Tape::new();
    let h = tape.constant(b.features().clone());
    let parts: Vec<_> = [ReduceKind::Sum, ReduceKind::Mean, ReduceKind::Max]
        .iter()
        .map(|&k| h.segment_reduce(k, b.graph_ids(), b.num_graphs()).unwrap())
        .collect();
    let mut store = ParamStore::new();
    let ens = PredictionEnsemble::new(ReadoutKind::MeanPred, &mut store, 3, d, d, 4, &mut stream(302, Stream::Init)).unwrap();
    let ctx = Ctx::eval(&tape, &store);
    let heads = ens.head_outputs(&ctx, &parts).unwrap();
    let out = ens.forward(&ctx, &parts).unwrap().value();
    let mut mean_gap: f64 = 0.0;
    for i in 0..out.numel() {
        let m = heads.iter().map(|v| v.value().data()[i]).sum::<f64>() / heads.len() as f64;
        mean_gap = mean_gap.max((out.data()[i] - m).abs());
    }
    ensure(mean_gap <= 1e-12, || format!("mean_pred differs from head mean by {mean_gap:e}"))?;

    let got = readout_values(ReadoutKind::WmeanR, None, &b, d);
    let basics: Vec<Tensor> = [ReadoutKind::Sum, ReadoutKind::Mean, ReadoutKind::Max]
        .into_iter()
        .map(|k| readout_values(k, None, &b, d))
        .collect();
    let mut sum_gap: f64 = 0.0;
    for i in 0..got.numel() {
        let s: f64 = basics.iter().map(|t| t.data()[i]).sum();
        sum_gap = sum_gap.max((got.data()[i] - s).abs());
    }
    ensure(sum_gap <= 1e-12, || format!("wmean_r at unit weights differs from the sum by {sum_gap:e}"))?;

    for kinds in [
        vec![ReadoutKind::Sum, ReadoutKind::Max],
        vec![ReadoutKind::Sum, ReadoutKind::Mean, ReadoutKind::Max],
    ] {
        let n = kinds.len();
        let out = readout_values(ReadoutKind::ConcatR, Some(kinds), &b, d);
        ensure(out.shape() == [b.num_graphs(), n * d], || {
            format!("concat_r over {n} readouts has shape {:?}, want width {}", out.shape(), n * d)
        })?;
    }
    Ok(format!("mean_pred gap {mean_gap:.1e}, wmean_r gap {sum_gap:.1e}, concat widths 2d and 3d"))
}

// ---------------------------------------------------------------- 4

fn dense_oracles() -> Outcome {
    let graphs = random_graphs(400, 50, 12, 4);
    let mut worst: f64 = 0.0;
    for kind in ConvKind::ALL {
        let mut store = ParamStore::new();
        let layer = ConvLayer::new(kind, &mut store, "conv", 4, 5, &mut stream(401, Stream::Init)).unwrap();
        let vec_of = |id| store.value(id).data().to_vec();
        for (i, g) in graphs.iter().enumerate() {
            let b = batch(std::slice::from_ref(g)).unwrap();
            let tape = Tape::new();
            let ctx = Ctx::eval(&tape, &store);
            let got = rows(&layer.forward(&ctx, &b, tape.constant(b.features().clone())).unwrap().value());
            let x = rows(g.features());
            let want = match &layer {
                ConvLayer::Gcn { lin } => gcn_oracle(g, &x, &rows(store.value(lin.weight)), &vec_of(lin.bias.unwrap())),
                ConvLayer::Gat {
                    weight,
                    att_src,
                    att_dst,
                    ..
                } => gat_oracle(g, &x, &rows(store.value(*weight)), &vec_of(*att_src), &vec_of(*att_dst)),
                ConvLayer::Gin { mlp } => gin_oracle(
                    g,
                    &x,
                    &rows(store.value(mlp.first.weight)),
                    &vec_of(mlp.first.bias.unwrap()),
                    &rows(store.value(mlp.second.weight)),
                    &vec_of(mlp.second.bias.unwrap()),
                ),
            };
            let err = max_abs_diff(&got, &want);
            ensure(err <= 1e-10, || format!("{kind} graph {i}: {err:e}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("gcn, gat, gin on 50 graphs, worst {worst:.1e}"))
}

// ---------------------------------------------------------------- 5, 6, 7, 10

fn dataset_dir(name: &str) -> Result<PathBuf, String> {
    let root = std::env::var_os(cli::DATASET_DIR_VAR)
        .ok_or_else(|| format!("{name} unavailable: set {} to a directory holding {name}/", cli::DATASET_DIR_VAR))?;
    let dir = PathBuf::from(root).join(name);
    ensure(dir.is_dir(), || format!("{name} unavailable: {} does not exist", dir.display()))?;
    Ok(dir)
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(5)
}

/// Five repetitions of one configuration; returns the CSV rows.
fn train_cell(dataset: &str, conv: ConvKind, readout: ReadoutKind, out: &Path) -> Result<Vec<ResultRow>, String> {
    let mut cfg = ExperimentConfig::with_defaults(dataset, conv, readout);
    cfg.dataset_path = Some(dataset_dir(dataset)?);
    cfg.run.repeats = 5;
    cfg.run.threads = threads();
    cfg.run.out_dir = out.to_path_buf();
    cli::cmd_run(&cfg).map_err(|e| format!("{dataset} {conv}/{readout}: {e}"))?;
    cli::read_csv(&out.join(cli::RESULTS_FILE)).map_err(|e| e.to_string())
}

fn run_mean(rows: &[ResultRow]) -> Result<f64, String> {
    let runs: Vec<f64> = rows.iter().filter(|r| !r.is_summary()).map(|r| r.metric_value).collect();
    ensure(runs.iter().all(|v| v.is_finite()), || format!("failed runs: {runs:?}"))?;
    Ok(runs.iter().sum::<f64>() / runs.len() as f64)
}

fn temp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn mutag_gin_sum(out: &Path) -> Result<Vec<ResultRow>, String> {
    train_cell("MUTAG", ConvKind::Gin, ReadoutKind::Sum, out)
}

fn mutag_reproduction(first: &mut Option<Vec<ResultRow>>) -> Outcome {
    let start = Instant::now();
    let dir = temp();
    let rows = mutag_gin_sum(dir.path())?;
    *first = Some(rows.clone());
    let mean = run_mean(&rows)?;
    within(Duration::from_secs(600), start, "MUTAG reproduction")?;
    ensure(mean >= 0.70, || format!("mean test F1 {mean:.4} < 0.70"))?;
    Ok(format!("mean test F1 {mean:.4}, {:.1?}", start.elapsed()))
}

fn enzymes_sanity() -> Outcome {
    let start = Instant::now();
    let dir = temp();
    let rows = train_cell("ENZYMES", ConvKind::Gcn, ReadoutKind::DeepsetsBase, dir.path())?;
    let mean = run_mean(&rows)?;
    within(Duration::from_secs(1200), start, "ENZYMES sanity")?;
    ensure(mean >= 0.35, || format!("mean macro-F1 {mean:.4} < 0.35"))?;
    Ok(format!("mean macro-F1 {mean:.4}, {:.1?}", start.elapsed()))
}

fn ensemble_ordering() -> Outcome {
    let baseline = run_mean(&train_cell("MUTAG", ConvKind::Gin, ReadoutKind::Mean, temp().path())?)?;
    let mut best = (f64::NEG_INFINITY, ReadoutKind::ConcatR);
    for kind in ReadoutKind::ALL.into_iter().filter(|k| k.is_ensemble()) {
        let m = run_mean(&train_cell("MUTAG", ConvKind::Gin, kind, temp().path())?)?;
        if m > best.0 {
            best = (m, kind);
        }
    }
    let (m, kind) = best;
    ensure(m >= baseline - 0.02, || {
        format!("best ensemble {kind} at {m:.4} trails the mean readout {baseline:.4} by more than 2 points")
    })?;
    Ok(format!("best ensemble {kind} {m:.4} vs mean readout {baseline:.4}"))
}

fn determinism(first: &Option<Vec<ResultRow>>) -> Outcome {
    let first = match first {
        Some(r) => r.clone(),
        None => mutag_gin_sum(temp().path())?,
    };
    let again = mutag_gin_sum(temp().path())?;
    ensure(first.len() == again.len(), || "row counts differ".into())?;
    for (a, b) in first.iter().zip(&again) {
        ensure(
            (&a.seed, &a.metric_name, a.metric_value.to_bits(), a.param_count, a.epochs)
                == (&b.seed, &b.metric_name, b.metric_value.to_bits(), b.param_count, b.epochs),
            || format!("seed {}: {a:?} vs {b:?}", a.seed),
        )?;
    }
    Ok(format!("{} rows bit-identical", first.len()))
}

// ---------------------------------------------------------------- 8

fn parameter_ledger() -> Outcome {
    let (d_v, d_g) = (128, 128);
    let count = |kind: ReadoutKind| {
        let spec = ModelSpec::new(ConvKind::Gcn, kind, 7, d_v, d_g, 2).with_n_max(28);
        build_model(spec, 800).count_readout_parameters()
    };
    let want = [
        (ReadoutKind::Sum, 0),
        (ReadoutKind::WmeanR, 6),
        (ReadoutKind::WmeanRProj, 6 + 3 * (d_v * d_g + d_g)),
    ];
    for (kind, n) in want {
        let got = count(kind);
        ensure(got == n, || format!("{kind}: {got} parameters, want {n}"))?;
    }
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", 128, 128, true, &mut stream(801, Stream::Init)).unwrap();
    let (own, stored) = (lin.num_params(), store.count_trainable());
    ensure(own == 16512 && stored == 16512, || format!("linear 128->128: {own} / {stored}, want 16512"))?;
    Ok(format!("sum 0, wmean_r 6, wmean_r_proj {}, linear 16512", 6 + 3 * (d_v * d_g + d_g)))
}

// ---------------------------------------------------------------- 9

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

fn parser_round_trips() -> Outcome {
    let graphs = parse_tudataset(fixture("tud/TINY")).map_err(|e| e.to_string())?;
    let dir = temp();
    let out = dir.path().join("TINY");
    write_tudataset(&out, "TINY", &graphs, FeatureLayout::LabelsAndAttributes { label_width: 2 }).map_err(|e| e.to_string())?;
    let again = parse_tudataset(&out).map_err(|e| e.to_string())?;
    ensure(again == graphs, || "TUD round trip changed the graphs".into())?;

    let (train, val, test) = load_zinc_subset(fixture("zinc")).map_err(|e| e.to_string())?;
    let zdir = temp();
    write_zinc_subset(zdir.path(), &train, &val, &test).map_err(|e| e.to_string())?;
    let back = load_zinc_subset(zdir.path()).map_err(|e| e.to_string())?;
    ensure(back == (train.clone(), val.clone(), test.clone()), || "ZINC round trip changed the graphs".into())?;
    Ok(format!(
        "TUD {} graphs, ZINC {}/{}/{} graphs",
        graphs.len(),
        train.len(),
        val.len(),
        test.len()
    ))
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

#[test]
fn acceptance() {
    report("");
    let mut mutag_rows = None;
    let mut failed = Vec::new();
    let mut record = |id: u32, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => report(&format!("criterion {id:>2} PASS  {name}: {detail}")),
            Err(why) => {
                report(&format!("criterion {id:>2} FAIL  {name}: {why}"));
                failed.push(id);
            }
        }
    };
    record(1, "gradient suite", guarded(gradient_suite));
    record(2, "permutation invariance", guarded(invariance_suite));
    record(3, "ensemble identities", guarded(ensemble_identities));
    record(4, "dense-oracle equivalence", guarded(dense_oracles));
    record(5, "MUTAG GIN + sum", guarded(|| mutag_reproduction(&mut mutag_rows)));
    record(6, "ENZYMES GCN + deepsets_base", guarded(enzymes_sanity));
    record(7, "MUTAG ensemble vs mean readout", guarded(ensemble_ordering));
    record(8, "parameter ledger", guarded(parameter_ledger));
    record(9, "parser round trips", guarded(parser_round_trips));
    record(10, "determinism", guarded(|| determinism(&mutag_rows)));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
