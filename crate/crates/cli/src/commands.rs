use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::json;

use preclab_core::analysis::{
    annotate, attribute_component, collect_activations, detect_intermediate, fit_linear_probe, fit_logistic_probe,
    logit_lens_k, operator_dataset, write_probe_csv, Component, PositionSelector, ProbeConfig, ProbeSite,
};
use preclab_core::exprgen::{
    count_admitted, enumerate_dataset, read_jsonl, write_jsonl, FilterPolicy, MIXED_PAIRS,
};
use preclab_core::geometry::{cluster_separation, project_2d, write_separation_csv, ActivationSite, LabeledActivationSet};
use preclab_core::interventions::{
    ablate_attention_sweep, correct_subset, cumulative_patch, dim_contributions, SwapExperiment,
};
use preclab_core::tinylm::{checkpoint, split_indices, Model, ModelConfig, TokenId, TrainConfig};
use preclab_core::tracing::CapturePoint;
use preclab_core::{Expression, StructureVariant};

use crate::error::{CliError, Result};
use crate::manifest::Run;
use crate::{EvalArgs, GenArgs, LensArgs, ProbeArgs, SwapArgs, TrainArgs};

fn out_dir(out: &Option<PathBuf>, command: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| Path::new("runs").join(command))
}

fn policy_by_name(name: &str) -> Result<FilterPolicy> {
    FilterPolicy::ALL.into_iter().find(|p| p.name() == name).ok_or_else(|| {
        let names: Vec<&str> = FilterPolicy::ALL.iter().map(|p| p.name()).collect();
        CliError::usage(format!("unknown filter {name:?}; expected one of {}", names.join(", ")))
    })
}

fn load_data(run: &mut Run, path: Option<&Path>) -> Result<Vec<Expression>> {
    let Some(path) = path else {
        return Ok(preclab_core::exprgen::default_dataset());
    };
    let bytes = run.read_input(path)?;
    let data = read_jsonl(BufReader::new(&bytes[..])).map_err(|e| CliError::from(e).context(path.display()))?;
    if data.is_empty() {
        return Err(CliError::data(format!("{}: no records", path.display())));
    }
    Ok(data)
}

fn load_model(run: &mut Run, path: &Path) -> Result<Model<f32>> {
    let bytes = run.read_input(path)?;
    checkpoint::from_bytes(&bytes).map_err(|e| CliError::from(e).context(path.display()))
}

fn jsonl_bytes(exprs: &[Expression]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, exprs).expect("write to memory");
    buf
}

pub fn gen(a: GenArgs) -> Result<()> {
    let policy = policy_by_name(&a.policy)?;
    if !policy.checks_every_step() {
        return Err(CliError::usage(format!(
            "filter {} admits non-whole intermediates and only supports --filters counting",
            policy.name()
        )));
    }
    let config = json!({ "policy": policy.name(), "operands": [1, 9], "filters": a.filters });
    let mut run = Run::beside("gen", a.seed, config, &a.out)?;
    let operands: Vec<i64> = (1..=9).collect();
    let data = enumerate_dataset(&operands, &MIXED_PAIRS, policy)?;
    run.write_path(&a.out, &jsonl_bytes(&data))?;
    if a.filters {
        let mut table = Vec::new();
        writeln!(table, "filter,count,matches_reference,description")?;
        for p in FilterPolicy::ALL {
            let n = count_admitted(&operands, &MIXED_PAIRS, p)?;
            writeln!(table, "{},{n},{},{}", p.name(), n == 8547, p.description())?;
        }
        std::io::stdout().write_all(&table)?;
        let mut name = a.out.file_name().unwrap_or_default().to_os_string();
        name.push(".filters.csv");
        run.write_path(&a.out.with_file_name(name), &table)?;
    }
    println!("{} expressions -> {}", data.len(), a.out.display());
    run.finish()?;
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            toml::from_str::<TrainFile>(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?
        }
        None => TrainFile::default(),
    };
    let mut model_cfg = file.model.unwrap_or_default();
    let mut train_cfg = file.train.unwrap_or_default();
    model_cfg.seed = a.common.seed;
    train_cfg.seed = a.common.seed;
    train_cfg.validate()?;
    model_cfg.validate()?;

    let config = json!({ "model": model_cfg, "train": train_cfg });
    let mut run = Run::in_dir("train", a.common.seed, config, &out_dir(&a.common.out, "train"))?;
    if let Some(p) = &a.config {
        run.read_input(p)?;
    }
    let data = load_data(&mut run, a.data.as_deref())?;
    let mut model = Model::<f32>::new(model_cfg)?;
    let outcome = model.train(&data, &train_cfg)?;
    run.write("model.bin", &checkpoint::to_bytes(&model))?;
    run.write_csv("metrics.csv", |w| {
        writeln!(w, "step,epoch,train_loss,heldout_accuracy")?;
        for p in &outcome.trace {
            writeln!(w, "{},{},{},{}", p.step, p.epoch, p.train_loss, p.heldout_accuracy)?;
        }
        Ok(())
    })?;
    println!(
        "trained {} steps: loss {:.4}, held-out accuracy {:.4} ({} train / {} held out)",
        train_cfg.steps, outcome.final_loss, outcome.heldout_accuracy, outcome.train_size, outcome.heldout_size
    );
    run.finish()?;
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut run = Run::in_dir("eval", a.common.seed, json!({}), &out_dir(&a.common.out, "eval"))?;
    let model = load_model(&mut run, &a.ckpt)?;
    let data = load_data(&mut run, a.data.as_deref())?;
    let correct = correct_subset(&model, &data)?;
    let is_correct: std::collections::HashSet<&str> = correct.iter().map(|e| e.text.as_str()).collect();
    run.write_csv("eval.csv", |w| {
        writeln!(w, "subset,n,correct,accuracy")?;
        let mut row = |name: &str, pick: &dyn Fn(&Expression) -> bool| {
            let n = data.iter().filter(|e| pick(e)).count();
            let c = data.iter().filter(|e| pick(e) && is_correct.contains(e.text.as_str())).count();
            let acc = if n == 0 { f64::NAN } else { c as f64 / n as f64 };
            writeln!(w, "{name},{n},{c},{acc}")
        };
        row("all", &|_| true)?;
        for v in StructureVariant::ALL {
            row(v.name(), &|e| e.variant == v)?;
        }
        Ok(())
    })?;
    run.write("correct.jsonl", &jsonl_bytes(&correct))?;
    println!(
        "accuracy {:.4} ({} / {})",
        correct.len() as f64 / data.len() as f64,
        correct.len(),
        data.len()
    );
    run.finish()?;
    Ok(())
}

pub fn lens(a: LensArgs) -> Result<()> {
    if a.topk == 0 {
        return Err(CliError::usage("--topk must be positive"));
    }
    let config = json!({ "prompt": a.prompt, "topk": a.topk });
    let mut run = Run::in_dir("lens", a.common.seed, config, &out_dir(&a.common.out, "lens"))?;
    let model = load_model(&mut run, &a.ckpt)?;
    let exprs = match &a.prompt {
        Some(p) => vec![Expression::from_prompt(p, FilterPolicy::default())?],
        None => correct_subset(&model, &load_data(&mut run, a.data.as_deref())?)?,
    };
    if exprs.is_empty() {
        return Err(CliError::data("no correctly answered prompts to scan"));
    }
    let vocab = model.vocab();
    let n_layers = model.config.n_layers;
    let mut rows = Vec::with_capacity(exprs.len());
    let mut single_report = None;
    for chunk in exprs.chunks(256) {
        let tokens = chunk.iter().map(|e| vocab.tokenize(&e.text)).collect::<std::result::Result<Vec<_>, _>>()?;
        let seqs: Vec<&[TokenId]> = tokens.iter().map(Vec::as_slice).collect();
        for (e, (cache, _)) in chunk.iter().zip(model.capture_batch(&seqs, &[])?) {
            let mut report = logit_lens_k(&cache, &model, a.topk)?;
            let det = detect_intermediate(&report, e);
            annotate(&mut report, &det);
            if let (Some(layer), Some(t)) = (det.first_layer_top1, det.token) {
                report.attribution = Some(attribute_component(&model, &cache, layer, t)?);
            }
            rows.push((e, det, report.attribution));
            if a.prompt.is_some() {
                single_report = Some(report);
            }
        }
    }
    if let Some(report) = &single_report {
        run.write_csv("lens.csv", |w| report.write_csv(w))?;
    }
    run.write_csv("detection.csv", |w| {
        writeln!(w, "prompt_id,text,intermediate,final,degenerate,detected,first_layer_top1,attribution")?;
        for (i, (e, det, attr)) in rows.iter().enumerate() {
            let first = det.first_layer_top1.map_or(String::new(), |l| l.to_string());
            let attr = attr.map_or(String::new(), |c| c.to_string());
            writeln!(
                w,
                "{i},{},{},{},{},{},{first},{attr}",
                e.text.trim_end(),
                e.intermediate,
                e.final_value,
                det.degenerate,
                det.any()
            )?;
        }
        Ok(())
    })?;
    run.write_csv("lens_layers.csv", |w| {
        writeln!(w, "layer,in_topk,top1,first_top1,first_by_attention,first_by_mlp")?;
        for l in 0..n_layers {
            let count = |f: &dyn Fn(&(&Expression, preclab_core::analysis::Detection, Option<Component>)) -> bool| {
                rows.iter().filter(|r| f(r)).count()
            };
            let first = |r: &(&Expression, _, Option<Component>), c: Option<Component>| {
                let det: &preclab_core::analysis::Detection = &r.1;
                det.first_layer_top1 == Some(l) && (c.is_none() || r.2 == c)
            };
            writeln!(
                w,
                "{l},{},{},{},{},{}",
                count(&|r| r.1.in_topk[l]),
                count(&|r| r.1.is_top1[l]),
                count(&|r| first(r, None)),
                count(&|r| first(r, Some(Component::Attention))),
                count(&|r| first(r, Some(Component::Mlp)))
            )?;
        }
        Ok(())
    })?;
    let detected = rows.iter().filter(|r| r.1.any()).count();
    let nondegenerate = rows.iter().filter(|r| !r.1.degenerate).count();
    let detected_nd = rows.iter().filter(|r| r.1.any() && !r.1.degenerate).count();
    println!(
        "intermediate in top-{} at some layer: {detected} / {} ({detected_nd} / {nondegenerate} non-degenerate)",
        a.topk,
        rows.len()
    );
    run.finish()?;
    Ok(())
}

fn parse_position(s: &str) -> Result<PositionSelector> {
    match s {
        "final" => Ok(PositionSelector::Final),
        "operators" => Ok(PositionSelector::Operators),
        n => n
            .parse()
            .map(PositionSelector::At)
            .map_err(|_| CliError::usage(format!("bad --position {s:?}; expected final, operators or an index"))),
    }
}

fn layers_for(model: &Model<f32>, layer: Option<usize>, default: Vec<usize>) -> Result<Vec<usize>> {
    match layer {
        Some(l) if l >= model.config.n_layers => Err(CliError::usage(format!(
            "--layer {l} out of range (model has {} layers)",
            model.config.n_layers
        ))),
        Some(l) => Ok(vec![l]),
        None => Ok(default),
    }
}

pub fn probe_linear(a: ProbeArgs) -> Result<()> {
    let position = parse_position(&a.position)?;
    let config = json!({ "layer": a.layer, "position": position.to_string(), "target": "intermediate" });
    let mut run = Run::in_dir("probe-linear", a.common.seed, config, &out_dir(&a.common.out, "probe-linear"))?;
    let model = load_model(&mut run, &a.ckpt)?;
    let data = load_data(&mut run, a.data.as_deref())?;
    let cfg = ProbeConfig {
        seed: a.common.seed,
        ..ProbeConfig::default()
    };
    let mut reports = Vec::new();
    for layer in layers_for(&model, a.layer, (0..model.config.n_layers).collect())? {
        for point in CapturePoint::ALL {
            let (x, owner) = collect_activations(&model, &data, layer, point, position)?;
            let y: Vec<f64> = owner.iter().map(|&o| data[o].intermediate as f64).collect();
            let rep = fit_linear_probe(&x, &y, &cfg)?.at(ProbeSite { layer, point, position });
            println!("layer {layer} {:<14} R² {:.4}", point.name(), rep.metric);
            reports.push(rep);
        }
    }
    run.write_csv("probe_linear.csv", |w| write_probe_csv(&reports, w))?;
    run.finish()?;
    Ok(())
}

pub fn probe_logistic(a: ProbeArgs) -> Result<()> {
    let config = json!({ "layer": a.layer, "position": "operators", "target": "evaluated_second" });
    let mut run = Run::in_dir("probe-logistic", a.common.seed, config, &out_dir(&a.common.out, "probe-logistic"))?;
    let model = load_model(&mut run, &a.ckpt)?;
    let data = load_data(&mut run, a.data.as_deref())?;
    let cfg = ProbeConfig {
        seed: a.common.seed,
        ..ProbeConfig::default()
    };
    let mut reports = Vec::new();
    let mut controls = Vec::new();
    for layer in layers_for(&model, a.layer, vec![0])? {
        for point in [CapturePoint::BlockInput, CapturePoint::PostAttention] {
            let (x, y, _, _) = operator_dataset(&model, &data, layer, point)?;
            let site = ProbeSite {
                layer,
                point,
                position: PositionSelector::Operators,
            };
            let rep = fit_logistic_probe(&x, &y, &cfg)?.at(site);
            let (perm, _) = split_indices(y.len(), 1.0, cfg.seed ^ 0x5eed);
            let shuffled: Vec<bool> = perm.iter().map(|&i| y[i]).collect();
            let control = fit_logistic_probe(&x, &shuffled, &cfg)?.at(site);
            println!(
                "layer {layer} {:<14} accuracy {:.4} (shuffled labels {:.4})",
                point.name(),
                rep.metric,
                control.metric
            );
            reports.push(rep);
            controls.push(control);
        }
    }
    run.write_csv("probe_logistic.csv", |w| write_probe_csv(&reports, w))?;
    run.write_csv("probe_logistic_shuffled.csv", |w| write_probe_csv(&controls, w))?;
    run.finish()?;
    Ok(())
}

pub fn ablate(a: EvalArgs) -> Result<()> {
    let mut run = Run::in_dir("ablate", a.common.seed, json!({}), &out_dir(&a.common.out, "ablate"))?;
    let model = load_model(&mut run, &a.ckpt)?;
    let data = load_data(&mut run, a.data.as_deref())?;
    let correct = correct_subset(&model, &data)?;
    if correct.is_empty() {
        return Err(CliError::data("model answers no prompt correctly"));
    }
    let report = ablate_attention_sweep(&model, &correct)?;
    run.write_csv("ablation.csv", |w| report.write_csv(w))?;
    for r in &report.layers {
        println!(
            "layer {:>2} ablated: accuracy {:.4}, detections {}",
            r.layer.unwrap_or_default(),
            r.accuracy,
            r.detection_count
        );
    }
    run.finish()?;
    Ok(())
}

pub fn swap(a: SwapArgs) -> Result<()> {
    let config = json!({ "prompt": a.prompt, "topk": a.topk });
    let mut run = Run::in_dir("swap", a.common.seed, config, &out_dir(&a.common.out, "swap"))?;
    let model = load_model(&mut run, &a.ckpt)?;
    let expr = Expression::from_prompt(&a.prompt, FilterPolicy::default())?;
    let exp = SwapExperiment::new(&expr)?;
    let ranking = dim_contributions(&model, &exp, a.topk)?;
    let patch = cumulative_patch(&model, &exp, &ranking)?;
    run.write_csv("contributions.csv", |w| ranking.write_csv(w))?;
    run.write_csv("patch.csv", |w| patch.write_csv(w))?;
    let vocab = model.vocab();
    let top: Vec<String> = ranking.dims(a.topk).iter().map(usize::to_string).collect();
    println!("top-{} dims by contribution: {}", a.topk, top.join(" "));
    match patch.minimal_k {
        Some(k) => println!(
            "prediction flips to {} after swapping {k} of {} dims",
            vocab.lexeme(exp.t_target),
            model.config.d_model
        ),
        None => println!("prediction never reaches {}", vocab.lexeme(exp.t_target)),
    }
    run.finish()?;
    Ok(())
}

pub fn project(a: EvalArgs) -> Result<()> {
    let mut run = Run::in_dir("project", a.common.seed, json!({ "layer": 0 }), &out_dir(&a.common.out, "project"))?;
    let model = load_model(&mut run, &a.ckpt)?;
    let data = load_data(&mut run, a.data.as_deref())?;
    let correct = correct_subset(&model, &data)?;
    let mut separation = Vec::new();
    for (site, point, file) in [
        (ActivationSite::PreAttention, CapturePoint::BlockInput, "coords_pre_attention.csv"),
        (ActivationSite::PostAttention, CapturePoint::PostAttention, "coords_post_attention.csv"),
    ] {
        let (rows, _, labels, owner) = operator_dataset(&model, &correct, 0, point)?;
        let set = LabeledActivationSet::new(site, rows, labels, owner)?;
        let proj = project_2d(&set)?;
        let score = cluster_separation(&set)?;
        let n_labels = set.labels.iter().collect::<std::collections::BTreeSet<_>>().len();
        println!("{site}: silhouette {score:.4} over {} rows, {n_labels} labels", set.rows.len());
        separation.push((site, score, set.rows.len(), n_labels));
        run.write_csv(file, |w| proj.write_csv(w))?;
    }
    run.write_csv("separation.csv", |w| write_separation_csv(&separation, w))?;
    run.finish()?;
    Ok(())
}
