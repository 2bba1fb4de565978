use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;

use evdl_core::baselines::{ensemble_train, mc_dropout_train, snn_train, DropoutSpec, EnsembleSpec};
use evdl_core::checkpoint::{load_checkpoint, save_checkpoint};
use evdl_core::classifier::{fine_tune, train, History, ModelCheckpoint, TrainConfig};
use evdl_core::data::{
    export_sweep, load_dataset, save_dataset, split_dataset, synthesize_dataset, synthesize_persona_dataset, write_results,
    PersonaSpec, ResultRow, SyntheticSpec,
};
use evdl_core::decision::{
    compute_metrics, sweep_delegation_rates, sweep_thresholds, uncertainty_histogram, Channel, MetricsReport,
    PersonaConfig, UncertaintyHistogram, MIN_RANDOMIZATION_ITERATIONS,
};
use evdl_core::evaluation::{
    compare_against, ensemble_predictions, evidential_predictions, mc_dropout_predictions,
    snn_predictions, Comparison,
};
use evdl_core::losses::{LossConfig, RiskMatrix};
use evdl_core::network::NetworkSpec;
use evdl_core::RngSeed;
use evdl_service::{AppState, ServiceConfig};
use serde::Serialize;

use crate::args::*;
use crate::Failure;

type Outcome = Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn runtime(msg: impl std::fmt::Display) -> Failure {
    Failure::Runtime(msg.to_string())
}

pub fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Finetune(a) => finetune(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
        Command::Compare(a) => compare(a),
        Command::Serve(a) => serve(a),
    }
}

fn check_theta(theta: f64) -> Outcome {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(invalid(format!("--theta must lie in [0, 1], got {theta}")))
    }
}

fn risk(r01: f64, r10: f64) -> Result<RiskMatrix, Failure> {
    RiskMatrix::new(r01, r10).map_err(|e| invalid(e.to_string()))
}

fn train_config(o: &TrainOpts) -> Result<TrainConfig, Failure> {
    let tc = TrainConfig {
        epochs: o.epochs,
        batch_size: o.batch_size,
        learning_rate: o.lr,
        seed: RngSeed(o.seed),
        ..TrainConfig::default()
    };
    tc.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(tc)
}

/// Text output goes to `out` when given, otherwise to standard output.
fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(runtime),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(runtime)?;
    s.push('\n');
    Ok(s)
}

fn print_history(history: &History) {
    let mut out = String::from("epoch,mean_loss,accuracy\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.epoch, h.mean_loss, h.accuracy));
    }
    print!("{out}");
}

fn synth(a: SynthArgs) -> Outcome {
    let base = SyntheticSpec::two_clusters(a.n_per_class, a.dim, a.separation, a.spread, a.overlap, RngSeed(a.seed));
    base.validate().map_err(|e| invalid(e.to_string()))?;
    let ds = match a.persona_items {
        Some(0) => return Err(invalid("--persona-items must be >= 1")),
        Some(n) => synthesize_persona_dataset(&PersonaSpec::between_clusters(&base, n, RngSeed(a.seed)))?,
        None => synthesize_dataset(&base)?,
    };
    match &a.test {
        Some(test_path) => {
            let (train, test) = split_dataset(&ds, 0.5, RngSeed(a.seed))?;
            save_dataset(&train, &a.out)?;
            save_dataset(&test, test_path)?;
            log::info!("wrote {} training and {} test items", train.len(), test.len());
        }
        None => save_dataset(&ds, &a.out)?,
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let tc = train_config(&a.opts)?;
    let risk = risk(a.r01, a.r10)?;
    let lc = LossConfig {
        loss_kind: a.loss.into(),
        risk_mode: a.risk_mode.into(),
        ..LossConfig::default()
    };
    let data = load_dataset(&a.data)?;
    let spec = NetworkSpec::new(data.feature_dim(), a.hidden.clone()).map_err(|e| invalid(e.to_string()))?;
    let (model, history) = train(&data, spec, &tc, lc, risk)?;
    save_checkpoint(&model, &a.out)?;
    print_history(&history);
    Ok(())
}

fn finetune(a: FinetuneArgs) -> Outcome {
    let tc = train_config(&a.opts)?;
    let mut base = load_checkpoint(&a.model)?;
    if a.r01.is_some() || a.r10.is_some() {
        let r = risk(a.r01.unwrap_or(base.risk_matrix.r01()), a.r10.unwrap_or(base.risk_matrix.r10()))?;
        base = base.with_risk_matrix(r);
    }
    let personal = load_dataset(&a.data)?;
    let (tuned, history) = fine_tune(&base, &personal, &tc)?;
    save_checkpoint(&tuned, &a.out)?;
    print_history(&history);
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport {
    theta: f64,
    items: usize,
    metrics: MetricsReport,
    histogram: UncertaintyHistogram,
}

fn evaluate(a: EvaluateArgs) -> Outcome {
    check_theta(a.theta)?;
    if a.bins < 2 {
        return Err(invalid("--bins must be >= 2"));
    }
    let model = load_checkpoint(&a.model)?;
    let data = load_dataset(&a.data)?;
    let preds = evidential_predictions(&model, &data, a.theta)?;
    let gold = data.labels();
    let report = EvaluationReport {
        theta: a.theta,
        items: data.len(),
        metrics: compute_metrics(&preds, &gold)?,
        histogram: uncertainty_histogram(&preds, &gold, a.bins)?,
    };
    emit(a.out.as_deref(), &to_json(&report)?)
}

fn sweep(a: SweepArgs) -> Outcome {
    if let Some(t) = &a.thetas {
        t.iter().try_for_each(|&x| check_theta(x))?;
    }
    if let Some(r) = &a.rates {
        if let Some(bad) = r.iter().find(|x| !(0.0..1.0).contains(*x)) {
            return Err(invalid(format!("--rates must lie in [0, 1), got {bad}")));
        }
    }
    let model = load_checkpoint(&a.model)?;
    let data = load_dataset(&a.data)?;
    let channel: Channel = a.channel.into();
    let preds = evidential_predictions(&model, &data, 1.0)?;
    let points = match (&a.rates, &a.thetas) {
        (Some(rates), _) => sweep_delegation_rates(&preds, &data.labels(), rates, channel)?,
        (None, thetas) => {
            let grid = thetas.clone().unwrap_or_else(evdl_service::sweep_grid);
            sweep_thresholds(&preds, &data.labels(), &grid, channel)?
        }
    };
    match &a.out {
        Some(path) => export_sweep(&points, path)?,
        None => {
            let rows: Vec<ResultRow> = points.iter().map(ResultRow::from).collect();
            write_results(&rows, std::io::stdout().lock())?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CompareReport {
    evidential: Comparison,
    baselines: Vec<Comparison>,
}

fn compare(a: CompareArgs) -> Outcome {
    let tc = train_config(&a.opts)?;
    let dropout = DropoutSpec {
        rate: a.dropout_rate,
        passes: a.passes,
    };
    dropout.validate().map_err(|e| invalid(e.to_string()))?;
    let ensemble = EnsembleSpec::with_members(a.members);
    ensemble.validate().map_err(|e| invalid(e.to_string()))?;
    if a.iterations < MIN_RANDOMIZATION_ITERATIONS {
        return Err(invalid(format!("--iterations must be >= {MIN_RANDOMIZATION_ITERATIONS}")));
    }
    let train_ds = load_dataset(&a.data)?;
    let test = load_dataset(&a.test)?;
    let spec = NetworkSpec::with_default_hidden(train_ds.feature_dim())?;
    let evidential = match &a.model {
        Some(path) => load_checkpoint(path)?,
        None => train(&train_ds, spec.clone(), &tc, LossConfig::default(), RiskMatrix::default())?.0,
    };
    let reference = evidential_predictions(&evidential, &test, 1.0)?;
    let seed = RngSeed(a.opts.seed);
    let snn = snn_train(&train_ds, spec.clone(), &tc)?.0;
    let mc = mc_dropout_train(&train_ds, spec.clone(), &tc, &dropout)?.0;
    let members: Vec<ModelCheckpoint> = ensemble_train(&train_ds, spec, &tc, &ensemble)?
        .into_iter()
        .map(|(m, _)| m)
        .collect();
    let others = [
        ("snn", snn_predictions(&snn, &test, 1.0)?),
        ("mc_dropout", mc_dropout_predictions(&mc, &test, &dropout, seed.derive(10), 1.0)?),
        ("deep_ensemble", ensemble_predictions(&members, &test, 1.0)?),
    ];
    let mut baselines = Vec::new();
    for (i, (name, preds)) in others.iter().enumerate() {
        baselines.push(compare_against(name, &reference, preds, &test, a.iterations, seed.derive(20 + i as u64))?);
    }
    let own = compare_against("evidential", &reference, &reference, &test, a.iterations, seed.derive(19))?;
    emit(
        a.out.as_deref(),
        &to_json(&CompareReport {
            evidential: own,
            baselines,
        })?,
    )
}

fn serve(a: ServeArgs) -> Outcome {
    check_theta(a.theta)?;
    let persona = PersonaConfig {
        risk_matrix: risk(a.r01, a.r10)?,
        theta: a.theta,
        persona_name: "default".into(),
    };
    let mut config = ServiceConfig::new(&a.data);
    config.initial_model = a.model.as_deref().map(load_checkpoint).transpose()?;
    config.eval_set = a.test.as_deref().map(load_dataset).transpose()?;
    config.default_persona = persona;
    config.train_defaults.seed = RngSeed(a.seed);
    let state = AppState::open(config)?;
    let addr = SocketAddr::from(([127, 0, 0, 1], a.port));
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(evdl_service::serve(state, addr)).map_err(runtime)
}
