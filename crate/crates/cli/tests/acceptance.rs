//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.

use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use evdl_core::baselines::{
    ensemble_predict, ensemble_train, mc_dropout_predict, mc_dropout_train, snn_predict, snn_train, DropoutSpec,
    EnsembleSpec,
};
use evdl_core::checkpoint::{load_checkpoint, save_checkpoint};
use evdl_core::classifier::{fine_tune, train, EvidentialObjective, ModelCheckpoint, Objective, TrainConfig};
use evdl_core::data::{
    load_dataset, split_dataset, synthesize_dataset, synthesize_persona_dataset, Dataset, PersonaSpec, SyntheticSpec,
};
use evdl_core::decision::{
    compute_metrics, label_metrics, sweep_delegation_rates, sweep_thresholds, Channel, Confusion, MetricsReport,
    Prediction,
};
use evdl_core::evaluation::{
    accuracy_at_coverage, compare_against, ensemble_predictions, evidential_predictions, mc_dropout_predictions,
    snn_predictions,
};
use evdl_core::evidential::{kl_to_uniform, normalized_entropy, BetaOpinion, EvidencePair, Probability};
use evdl_core::losses::{
    annealing_coefficient, expected_brier, expected_cross_entropy, kl_regularizer, loss_gradient_wrt_logits,
    sample_loss, Label, LossConfig, LossKind, RiskMatrix, RiskMode,
};
use evdl_core::network::{flatten, Mlp, NetworkSpec};
use evdl_core::special::{beta_pdf, integrate_unit_interval, sample_beta};
use evdl_core::{Error, RngSeed};
use rand::Rng;
use serde_json::{json, Value};

#[path = "../../core/tests/common/hand_metrics.rs"]
mod hand_metrics;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit_secs: u64) -> Result<f64, String> {
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < limit_secs as f64, || format!("took {secs:.1} s, limit {limit_secs} s"))?;
    Ok(secs)
}

fn op(a: f64, b: f64) -> BetaOpinion<f64> {
    BetaOpinion::new(a, b).unwrap()
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn loss_monte_carlo() -> Outcome {
    let start = Instant::now();
    let grid = [1.0, 2.0, 5.0, 20.0];
    let mut worst: f64 = 0.0;
    let mut stream = 0;
    for &a in &grid {
        for &b in &grid {
            stream += 1;
            let samples: Vec<f64> = sample_beta(a, b, RngSeed(1000).derive(stream), 1_000_000).map_err(|e| e.to_string())?;
            for y in [Label::Public, Label::Private] {
                let t = if y == Label::Private { 1.0 } else { 0.0 };
                let brier: Vec<f64> = samples.iter().map(|p| (t - p).powi(2) + ((1.0 - t) - (1.0 - p)).powi(2)).collect();
                let ce: Vec<f64> = samples.iter().map(|p| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())).collect();
                for (name, closed, draws) in [
                    ("brier", expected_brier(&op(a, b), y), &brier),
                    ("ce", expected_cross_entropy(&op(a, b), y), &ce),
                ] {
                    let (m, se) = mean_and_se(draws);
                    let z = (closed - m).abs() / se;
                    worst = worst.max(z);
                    ensure(z <= 3.0, || format!("{name} a={a} b={b} {y:?}: {closed} vs {m} ({z:.2} SE)"))?;
                }
            }
        }
    }
    let secs = within(start, 60)?;
    Ok(format!("64 checks, worst {worst:.2} SE, {secs:.1} s"))
}

fn kl_quadrature() -> Outcome {
    let start = Instant::now();
    let grid = [1.0, 2.0, 5.0, 10.0, 50.0];
    let mut worst: f64 = 0.0;
    for &a in &grid {
        for &b in &grid {
            let integrand = |p: f64| {
                let f = beta_pdf(p, a, b).unwrap();
                if f > 0.0 {
                    f * f.ln()
                } else {
                    0.0
                }
            };
            let quad = integrate_unit_interval(integrand, 1e-10).map_err(|e| e.to_string())?;
            let diff = (kl_to_uniform(&op(a, b)) - quad).abs();
            worst = worst.max(diff);
            ensure(diff < 1e-6, || format!("a={a} b={b}: {} vs {quad}", kl_to_uniform(&op(a, b))))?;
        }
    }
    let secs = within(start, 10)?;
    Ok(format!("25 points, worst {worst:.2e}, {secs:.2} s"))
}

fn loss_configs() -> Vec<LossConfig> {
    let mut out = Vec::new();
    for loss_kind in [LossKind::ExpectedBrier, LossKind::ExpectedCrossEntropy] {
        for risk_mode in [RiskMode::KlScaling, RiskMode::DirectRegularizer, RiskMode::Both] {
            out.push(LossConfig {
                loss_kind,
                risk_mode,
                anneal_horizon: 10,
            });
        }
    }
    out
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn network_loss(net: &Mlp, params: &[f64], x: &[f64], y: Label, obj: &EvidentialObjective, t: u64) -> f64 {
    let mut probe = net.clone();
    probe.set_flat_params(params).unwrap();
    obj.loss_and_grad(probe.logits(x).unwrap(), y, t).unwrap().0
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = RngSeed(2024).rng();
    let configs = loss_configs();
    let epochs = [0u64, 5, 20];
    let h = 1e-5;
    let spec = NetworkSpec::new(4, vec![3]).unwrap();
    let (mut worst_logit, mut worst_net): (f64, f64) = (0.0, 0.0);
    let mut done = 0;
    while done < 100 {
        let cfg = configs[done % configs.len()];
        let t = epochs[(done / configs.len()) % epochs.len()];
        let r = RiskMatrix::new(rng.random_range(0.5..3.0), rng.random_range(1.0..12.0)).unwrap();
        let y = if rng.random::<bool>() { Label::Private } else { Label::Public };

        let net = Mlp::init(spec.clone(), RngSeed(rng.random())).unwrap();
        let mut params = net.flat_params();
        for p in &mut params {
            *p += rng.random_range(-0.3..0.3);
        }
        let mut net = net;
        net.set_flat_params(&params).unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let first = &net.layers()[0];
        let near_kink = (0..first.fan_out).any(|o| {
            let z: f64 = first.bias[o] + (0..4).map(|i| first.weights[o * 4 + i] * x[i]).sum::<f64>();
            z.abs() < 1e-3
        });
        if near_kink {
            continue;
        }

        let logits = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let g = loss_gradient_wrt_logits(logits, y, &r, t, &cfg).map_err(|e| e.to_string())?;
        let at = |l: [f64; 2]| sample_loss(&EvidencePair::new(l[0].exp(), l[1].exp()).unwrap(), y, &r, t, &cfg);
        for k in 0..2 {
            let (mut up, mut down) = (logits, logits);
            up[k] += h;
            down[k] -= h;
            let fd = (at(up) - at(down)) / (2.0 * h);
            worst_logit = worst_logit.max(rel_err(g[k], fd));
        }

        let obj = EvidentialObjective {
            loss_config: cfg,
            risk_matrix: r,
        };
        let trace = net.trace(&x, None::<(f64, &mut rand_chacha::ChaCha8Rng)>).unwrap();
        let (_, d_logits) = obj.loss_and_grad(trace.logits, y, t).map_err(|e| e.to_string())?;
        let mut grads = net.zero_grads();
        net.backward(&trace, d_logits, &mut grads);
        let analytic = flatten(&grads);
        for k in 0..params.len() {
            let (mut up, mut down) = (params.clone(), params.clone());
            up[k] += h;
            down[k] -= h;
            let fd = (network_loss(&net, &up, &x, y, &obj, t) - network_loss(&net, &down, &x, y, &obj, t)) / (2.0 * h);
            worst_net = worst_net.max(rel_err(analytic[k], fd));
        }
        ensure(worst_logit < 1e-4 && worst_net < 1e-4, || {
            format!("config {done} {cfg:?} t={t}: logit {worst_logit:.2e}, network {worst_net:.2e}")
        })?;
        done += 1;
    }
    let secs = within(start, 60)?;
    Ok(format!("100 configs, worst relative error logits {worst_logit:.2e}, network {worst_net:.2e}, {secs:.1} s"))
}

fn annealing() -> Outcome {
    ensure(annealing_coefficient::<f64>(0, 10) == 0.0, || "λ_0 != 0".into())?;
    ensure(annealing_coefficient::<f64>(5, 10) == 0.5 * annealing_coefficient::<f64>(10, 10), || "λ_5 != λ_10 / 2".into())?;
    let cfg = LossConfig::default();
    let mut checked = 0;
    for (e, y) in [
        (EvidencePair::new(2.0, 0.5).unwrap(), Label::Private),
        (EvidencePair::new(0.1, 7.0).unwrap(), Label::Public),
        (EvidencePair::new(3.0, 3.0).unwrap(), Label::Private),
    ] {
        for r in [RiskMatrix::non_sensitive(), RiskMatrix::sensitive()] {
            let at = |t| kl_regularizer(&e, y, &r, t, &cfg);
            ensure(at(0) == 0.0, || format!("{e:?}: regularizer {} at t=0", at(0)))?;
            ensure(at(10) > 0.0 && at(5) == 0.5 * at(10), || format!("{e:?}: {} vs {}", at(5), at(10)))?;
            checked += 1;
        }
    }
    Ok(format!("exact on {checked} fixed inputs"))
}

/// The default synthetic scenario: training split, test split, model.
struct Scenario {
    train: Dataset,
    test: Dataset,
    model: ModelCheckpoint,
    preds: Vec<Prediction>,
}

fn scenario(risk: RiskMatrix) -> Scenario {
    let ds = synthesize_dataset(&SyntheticSpec::default()).unwrap();
    let (train_ds, test) = split_dataset(&ds, 0.5, RngSeed(42)).unwrap();
    let spec = NetworkSpec::with_default_hidden(train_ds.feature_dim()).unwrap();
    let (model, _) = train(&train_ds, spec, &TrainConfig::default(), LossConfig::default(), risk).unwrap();
    let preds = evidential_predictions(&model, &test, 1.0).unwrap();
    Scenario {
        train: train_ds,
        test,
        model,
        preds,
    }
}

fn separation(s: &Scenario) -> Outcome {
    let gold = s.test.labels();
    let (mut wrong, mut right) = (Vec::new(), Vec::new());
    for (p, g) in s.preds.iter().zip(&gold) {
        if p.is_correct(*g) {
            right.push(p.uncertainty_u);
        } else {
            wrong.push(p.uncertainty_u);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gap = mean(&wrong) - mean(&right);
    let detail = format!(
        "mean u misclassified {:.4} ({} items), correct {:.4}, gap {gap:.4} (need >= 0.05)",
        mean(&wrong),
        wrong.len(),
        mean(&right)
    );
    if gap >= 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn selective_lift(s: &Scenario) -> Outcome {
    let gold = s.test.labels();
    let sweep = sweep_thresholds(&s.preds, &gold, &[0.5, 1.0], Channel::U).map_err(|e| e.to_string())?;
    let acc = |i: usize| sweep[i].metrics.as_ref().map(|m| m.accuracy);
    let (Some(filtered), Some(all)) = (acc(0), acc(1)) else {
        return Err("empty retained set".into());
    };
    let rate = sweep_delegation_rates(&s.preds, &gold, &[0.25], Channel::U).map_err(|e| e.to_string())?;
    let delegated = rate[0].metrics.as_ref().map(|m| m.accuracy).unwrap_or(0.0);
    let detail = format!(
        "accuracy {all:.4} unfiltered, {filtered:.4} at θ=0.5 (coverage {:.3}), {delegated:.4} after delegating 25%",
        sweep[0].coverage
    );
    ensure(filtered - all >= 0.02 && delegated > all, || detail.clone())?;
    Ok(detail)
}

fn persona_effect(base: &Scenario, sensitive: &Scenario) -> Outcome {
    let gold = base.test.labels();
    let m0 = compute_metrics(&base.preds, &gold).map_err(|e| e.to_string())?;
    let m1 = compute_metrics(&sensitive.preds, &gold).map_err(|e| e.to_string())?;
    let drop = m0.accuracy - m1.accuracy;
    let detail = format!(
        "private recall {:.4} -> {:.4}, accuracy {:.4} -> {:.4}",
        m0.private.recall, m1.private.recall, m0.accuracy, m1.accuracy
    );
    ensure(m1.private.recall > m0.private.recall && drop < 0.03, || detail.clone())?;
    Ok(detail)
}

fn round_two(base: &Scenario) -> Outcome {
    let persona = synthesize_persona_dataset(&PersonaSpec::between_clusters(&SyntheticSpec::default(), 400, RngSeed(7)))
        .map_err(|e| e.to_string())?;
    let (personal, held_out) = split_dataset(&persona, 0.5, RngSeed(7)).map_err(|e| e.to_string())?;
    let random = synthesize_dataset(&SyntheticSpec {
        n_per_class: personal.len() / 2,
        seed: RngSeed(8),
        ..SyntheticSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let tc = TrainConfig::default();
    let (tuned, _) = fine_tune(&base.model, &personal, &tc).map_err(|e| e.to_string())?;
    let (shifted, _) = fine_tune(&base.model, &random, &tc).map_err(|e| e.to_string())?;
    let high_u = |m: &ModelCheckpoint| {
        let p = evidential_predictions(m, &held_out, 1.0).unwrap();
        p.iter().filter(|x| x.uncertainty_u > 0.7).count() as f64 / p.len() as f64
    };
    let (r1, r2, rr) = (high_u(&base.model), high_u(&tuned), high_u(&shifted));
    let detail = format!("fraction u > 0.7: round one {r1:.3}, personal {r2:.3}, random {rr:.3}");
    ensure(r2 < r1 && r1 - r2 > r1 - rr, || detail.clone())?;
    Ok(detail)
}

fn baselines(s: &Scenario) -> Outcome {
    let tc = TrainConfig::default();
    let spec = NetworkSpec::with_default_hidden(s.train.feature_dim()).unwrap();
    let dropout = DropoutSpec::default();
    let ensemble = EnsembleSpec::with_members(5);
    ensure(dropout.rate == 0.05 && dropout.passes == 5, || format!("{dropout:?}"))?;
    let err = |e: Error| e.to_string();
    let snn = snn_train(&s.train, spec.clone(), &tc).map_err(err)?.0;
    let mc = mc_dropout_train(&s.train, spec.clone(), &tc, &dropout).map_err(err)?.0;
    let members: Vec<ModelCheckpoint> =
        ensemble_train(&s.train, spec, &tc, &ensemble).map_err(err)?.into_iter().map(|(m, _)| m).collect();

    // each baseline emits a probability and its normalized entropy
    for ex in s.test.examples().iter().take(50) {
        let outs = [
            snn_predict(&snn, &ex.features).map_err(err)?,
            mc_dropout_predict(&mc, &ex.features, &dropout, RngSeed(3)).map_err(err)?.mean,
            ensemble_predict(&members, &ex.features).map_err(err)?,
        ];
        for o in outs {
            let h = normalized_entropy(Probability::new(o.p).unwrap());
            ensure((0.0..=1.0).contains(&o.p) && (o.entropy - h).abs() < 1e-12, || format!("{o:?}"))?;
        }
    }

    let seed = RngSeed(42);
    let others = [
        ("snn", snn_predictions(&snn, &s.test, 1.0).map_err(err)?),
        ("mc_dropout", mc_dropout_predictions(&mc, &s.test, &dropout, seed.derive(10), 1.0).map_err(err)?),
        ("deep_ensemble", ensemble_predictions(&members, &s.test, 1.0).map_err(err)?),
    ];
    let own = accuracy_at_coverage(&s.preds, &s.test, 0.5, Channel::Entropy).map_err(err)?;
    let mut parts = vec![format!("evidential {own:.4} at 50% entropy coverage")];
    let mut ok = true;
    for (i, (name, preds)) in others.iter().enumerate() {
        let a = compare_against(name, &s.preds, preds, &s.test, 10_000, seed.derive(20 + i as u64)).map_err(err)?;
        let b = compare_against(name, &s.preds, preds, &s.test, 10_000, seed.derive(20 + i as u64)).map_err(err)?;
        ensure(a.p_value == b.p_value, || format!("{name}: p-value {} then {}", a.p_value, b.p_value))?;
        ok &= own >= a.accuracy_at_half_coverage;
        parts.push(format!("{name} {:.4} (p = {:.4})", a.accuracy_at_half_coverage, a.p_value));
    }
    let detail = parts.join(", ");
    ensure(ok, || detail.clone())?;
    Ok(detail)
}

fn metrics_oracle() -> Outcome {
    let table = hand_metrics::hand_table();
    for h in &table {
        let [tp, fp, fn_, tn] = h.counts;
        let c = Confusion { tp, fp, fn_, tn };
        let (pred, gold) = hand_metrics::labels_for(&c);
        let m: MetricsReport<hand_metrics::Q> = label_metrics(&pred, &gold).map_err(|e| e.to_string())?;
        let exact = m.accuracy == h.accuracy
            && [m.private.precision, m.private.recall, m.private.f1] == h.private
            && [m.public.precision, m.public.recall, m.public.f1] == h.public
            && [m.precision, m.recall, m.f1] == h.macro_avg;
        ensure(exact, || format!("{:?}: {m:?}", h.counts))?;

        // the f64 path through compute_metrics, to within rounding
        let preds: Vec<Prediction> = pred
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let p = if *l == Label::Private { 0.9 } else { 0.1 };
                Prediction::new(format!("i{i}"), Probability::new(p).unwrap(), 0.1, 1.0)
            })
            .collect();
        let f = compute_metrics(&preds, &gold).map_err(|e| e.to_string())?;
        let as_f64 = |q: hand_metrics::Q| *q.numer() as f64 / *q.denom() as f64;
        let close = |a: f64, b: hand_metrics::Q| (a - as_f64(b)).abs() < 1e-15;
        ensure(close(f.accuracy, h.accuracy) && close(f.f1, h.macro_avg[2]) && f.coverage == 1.0, || {
            format!("{:?}: f64 report {f:?}", h.counts)
        })?;
    }
    Ok(format!("{} confusion matrices exact in rationals, f64 within 1e-15", table.len()))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn persistence(s: &Scenario) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.evdl");
    save_checkpoint(&s.model, &path).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
    ensure(loaded == s.model, || "loaded checkpoint differs".into())?;
    let again = dir.path().join("again.evdl");
    save_checkpoint(&loaded, &again).map_err(|e| e.to_string())?;
    ensure(std::fs::read(&path).unwrap() == std::fs::read(&again).unwrap(), || "re-saved bytes differ".into())?;
    for ex in s.test.examples() {
        let (a, b) = (s.model.logits(&ex.features).unwrap(), loaded.logits(&ex.features).unwrap());
        ensure(a.map(f64::to_bits) == b.map(f64::to_bits), || format!("logits differ on {}", ex.id))?;
    }

    let ds = load_dataset(fixture("label_convention.jsonl")).map_err(|e| e.to_string())?;
    let label = |id: &str| ds.get(id).map(|e| e.label());
    let expected = [
        ("a", Label::Private),
        ("b", Label::Public),
        ("c", Label::Private),
        ("d", Label::Public),
        ("e", Label::Private),
        ("f", Label::Private),
    ];
    for (id, want) in expected {
        ensure(label(id) == Some(want), || format!("fixture item {id}: {:?}", label(id)))?;
    }
    for bad in ["bad_dim.jsonl", "duplicate_id.jsonl", "missing_label.jsonl", "malformed.jsonl", "bad_label.jsonl"] {
        ensure(load_dataset(fixture(bad)).is_err(), || format!("{bad} was accepted"))?;
    }
    Ok(format!("bit-exact on {} items; 6 fixture labels, 5 rejections", s.test.len()))
}

async fn call(client: &reqwest::Client, method: reqwest::Method, url: String, body: Option<Value>) -> (u16, Value) {
    let mut req = client.request(method, url);
    if let Some(b) = body {
        req = req.json(&b);
    }
    let r = req.send().await.unwrap();
    let status = r.status().as_u16();
    (status, r.json().await.unwrap())
}

async fn service_flow() -> Outcome {
    use reqwest::Method;
    let persona = synthesize_persona_dataset(&PersonaSpec::between_clusters(&SyntheticSpec::default(), 400, RngSeed(7)))
        .unwrap();
    let (personal, stream) = split_dataset(&persona, 0.5, RngSeed(7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut config = evdl_service::ServiceConfig::new(dir.path());
    config.initial_model =
        Some(ModelCheckpoint::zero_head(NetworkSpec::with_default_hidden(8).unwrap(), RngSeed(0), "dense-f64-8").unwrap());
    let state = evdl_service::AppState::open(config).map_err(|e| e.to_string())?;
    let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0))).await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, evdl_service::router(state)).await.unwrap() });
    let client = reqwest::Client::new();
    let url = |p: &str| format!("{base}{p}");

    let (s, r) = call(&client, Method::PUT, url("/persona"), Some(json!({"theta": 0.4, "risk_matrix": [[0.0, 1.0], [1.0, 0.0]]}))).await;
    ensure(s == 200, || format!("persona: {s} {r}"))?;
    for ex in personal.examples() {
        let (s, r) = call(&client, Method::POST, url("/predict"), Some(json!({"item_id": ex.id, "features": ex.features}))).await;
        ensure(s == 200 && r["uncertainty"] == 0.5 && r["enqueued"] == true, || format!("predict: {s} {r}"))?;
    }
    let (_, q) = call(&client, Method::GET, url("/delegations"), None).await;
    ensure(q["pending"] == personal.len(), || format!("queue: {}", q["pending"]))?;
    for item in q["items"].as_array().unwrap() {
        let id = item["item_id"].as_str().unwrap();
        let label = personal.get(id).unwrap().label() as u8;
        let (s, r) = call(&client, Method::POST, url(&format!("/delegations/{id}/label")), Some(json!({"label": label}))).await;
        ensure(s == 200, || format!("label {id}: {s} {r}"))?;
    }
    let (_, q) = call(&client, Method::GET, url("/delegations"), None).await;
    ensure(q["pending"] == 0 && q["personal_examples"] == personal.len(), || format!("after labeling: {q}"))?;

    let replay = || async {
        let mut delegated = 0;
        for ex in stream.examples() {
            let (_, r) = call(&client, Method::POST, url("/predict"), Some(json!({"item_id": ex.id, "features": ex.features}))).await;
            delegated += usize::from(r["action"] == "delegate");
        }
        delegated
    };
    let round_one = replay().await;

    let (s, job) = call(&client, Method::POST, url("/finetune"), Some(json!({"learning_rate": 0.01}))).await;
    ensure(s == 202, || format!("finetune: {s} {job}"))?;
    let deadline = Instant::now() + Duration::from_secs(120);
    let status = loop {
        let (_, st) = call(&client, Method::GET, url("/finetune/status"), None).await;
        if st["state"] != "running" {
            break st;
        }
        ensure(Instant::now() < deadline, || "fine-tune job did not finish".into())?;
        tokio::time::sleep(Duration::from_millis(50)).await;
    };
    ensure(status["state"] == "succeeded" && status["model_version"] == 2, || format!("job: {status}"))?;
    let round_two = replay().await;
    let detail = format!("delegated on replay of {} items: {round_one} before, {round_two} after fine-tuning", stream.len());
    ensure(round_one == stream.len() && round_two < round_one, || detail.clone())?;
    Ok(detail)
}

fn service_scenario() -> Outcome {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(service_flow())
}

fn run(name: &str, check: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match outcome {
        Ok(detail) => {
            println!("PASS  {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL  {name}: {detail}");
            false
        }
    }
}

fn main() {
    let mut results = Vec::new();
    results.push(run("closed-form loss oracle", loss_monte_carlo));
    results.push(run("KL oracle", kl_quadrature));
    results.push(run("gradient suite", gradient_suite));
    results.push(run("regularizer annealing", annealing));

    let base = scenario(RiskMatrix::non_sensitive());
    let sensitive = scenario(RiskMatrix::sensitive());
    results.push(run("uncertainty-error separation", || separation(&base)));
    results.push(run("selective-accuracy lift", || selective_lift(&base)));
    results.push(run("persona effect", || persona_effect(&base, &sensitive)));
    results.push(run("round II effect", || round_two(&base)));
    results.push(run("baseline comparability", || baselines(&base)));
    results.push(run("metrics oracle", metrics_oracle));
    results.push(run("persistence", || persistence(&base)));
    results.push(run("service scenario", service_scenario));

    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
