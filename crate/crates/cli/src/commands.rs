use std::fs;
use std::path::Path;

use modbias::dataset::{build_dataset_from_dir, load_pair, save_pair, BuildConfig, DerangementKind, Regime};
use modbias::diagnostics::{
    bias_jsd_report, class_separation, embedding_svg, extract_features, jsd_svg, project, sharpness_compare,
    write_embedding_csv, write_jsd_csv, write_sharpness_csv, write_text, ErrorDistribution, Projection,
    KD_TEMPERATURES,
};
use modbias::loss::{cosine_logits, LossConfig, LossKind};
use modbias::margin::{
    count_bias, load_counts_csv, load_margin_table, margins_from_counts, save_counts_csv, save_margin_table,
};
use modbias::model::{ModelKind, ModelSpec, Params};
use modbias::train::{evaluate, sweep_margin, sweep_scale, train, write_run, write_sweep, OptimizerKind, TrainConfig};
use modbias::{Error, Execution, Result};

use crate::*;

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::EstimateMargins(a) => estimate_margins(a),
        Command::Train(a) => run_train(a),
        Command::SweepMargin(a) => run_sweep_margin(a),
        Command::SweepScale(a) => run_sweep_scale(a),
        Command::Diagnose(a) => diagnose(a),
        Command::LossProbe(a) => probe::run(a),
        Command::Report(a) => report::run(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let config = BuildConfig {
        regime: match a.regime {
            RegimeArg::Iid => Regime::Iid,
            RegimeArg::Ood => Regime::Ood,
        },
        seed: Some(a.seed),
        rho: a.rho,
        derangement: match a.derangement {
            DerangementArg::Random => DerangementKind::Random,
            DerangementArg::Cyclic => DerangementKind::Cyclic,
        },
        ..BuildConfig::default()
    };
    let (train, test) = build_dataset_from_dir(&a.mnist, &config)?;
    save_pair(&a.out, &train, &test)?;
    println!("wrote {} train and {} test samples to {}", train.len(), test.len(), a.out.display());
    Ok(())
}

fn estimate_margins(a: EstimateArgs) -> Result<()> {
    let counts = match (&a.data, &a.counts) {
        (Some(dir), _) => {
            let (train, _) = load_pair(dir)?;
            let factors = train.manifest.palette.colors.len();
            count_bias(train.labels(), train.bias_factors(), factors, modbias::dataset::NUM_CLASSES)?
        }
        (None, Some(path)) => load_counts_csv(path)?,
        (None, None) => unreachable!("clap requires a source"),
    };
    let table = margins_from_counts(&counts, a.epsilon)?;
    create_dir(&a.out)?;
    save_counts_csv(&counts, &a.out.join("counts.csv"))?;
    save_margin_table(&table, &a.out.join("margins.csv"))?;
    println!("wrote {}x{} margin table to {}", table.factors(), table.omega(), a.out.display());
    Ok(())
}

fn model_kind(m: ModelArg) -> ModelKind {
    match m {
        ModelArg::Mlp => ModelKind::Mlp,
        ModelArg::Lenet => ModelKind::Lenet,
    }
}

pub(crate) fn loss_kind(l: LossArg) -> LossKind {
    match l {
        LossArg::Softmax => LossKind::Softmax,
        LossArg::Nsl => LossKind::Nsl,
        LossArg::Lmcl => LossKind::Lmcl,
        LossArg::Mmdb => LossKind::Mmdb,
    }
}

fn execution(e: &ExecArgs) -> Execution {
    if e.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn base_config(c: &CommonTrainArgs, default_name: String) -> TrainConfig {
    TrainConfig {
        name: c.name.clone().unwrap_or(default_name),
        model: ModelSpec::of_kind(model_kind(c.model)),
        loss: LossConfig::default(),
        epochs: c.epochs,
        batch_size: c.batch_size,
        learning_rate: c.lr,
        optimizer: match c.optimizer {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::SgdMomentum => OptimizerKind::SgdMomentum,
        },
        seeds: c.seeds.clone(),
        data: Some(c.data.clone()),
        margins: None,
        train_limit: c.train_limit,
    }
}

fn print_accuracy(name: &str, report: &modbias::train::RunReport) {
    let a = report.test_accuracy;
    println!("{name}: test accuracy {:.2} ± {:.2} over {} seeds", a.mean * 100.0, a.std * 100.0, a.n);
}

fn run_train(a: TrainArgs) -> Result<()> {
    let kind = loss_kind(a.loss);
    let mut config = base_config(&a.common, format!("{}-{}", model_kind(a.common.model).name(), kind.name()));
    config.loss = LossConfig { kind, scale: a.scale, fixed_margin: a.margin, ..LossConfig::default() };
    config.margins = a.margins.clone();
    let exec = execution(&a.common.exec);
    let run = exec.install(a.common.exec.jobs, || train(&config, exec))?;
    let dir = a.common.out.join(&config.name);
    write_run(&dir, &run)?;
    print_accuracy(&config.name, &run.report);
    Ok(())
}

fn run_sweep_margin(a: SweepMarginArgs) -> Result<()> {
    let mut base = base_config(&a.common, format!("{}-table6", model_kind(a.common.model).name()));
    base.loss.scale = a.scale;
    base.margins = Some(a.margins.clone());
    let margins = load_margin_table(&a.margins)?;
    let (train, test) = load_pair(&a.common.data)?;
    let exec = execution(&a.common.exec);
    let sweep = sweep_margin(&base, &a.fixed, &train, &test, &margins, exec, a.common.exec.jobs)?;
    let dir = a.common.out.join(&base.name);
    write_sweep(&dir, &sweep)?;
    for c in &sweep.cells {
        print_accuracy(&c.report.config.name, &c.report);
    }
    Ok(())
}

fn run_sweep_scale(a: SweepScaleArgs) -> Result<()> {
    let mut base = base_config(&a.common, format!("{}-fig6", model_kind(a.common.model).name()));
    base.loss.fixed_margin = a.margin;
    base.margins = a.margins.clone();
    let margins = a.margins.as_deref().map(load_margin_table).transpose()?;
    let (train, test) = load_pair(&a.common.data)?;
    let methods: Vec<LossKind> = a.methods.iter().map(|&m| loss_kind(m)).collect();
    let exec = execution(&a.common.exec);
    let sweep = sweep_scale(&base, &methods, &a.scales, &train, &test, margins.as_ref(), exec, a.common.exec.jobs)?;
    let dir = a.common.out.join(&base.name);
    write_sweep(&dir, &sweep)?;
    for c in &sweep.cells {
        print_accuracy(&c.report.config.name, &c.report);
    }
    Ok(())
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(serde_json::from_str(&text)?)
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let config = read_config(&a.run.join("config.json"))?;
    let params = Params::load(&a.run.join("checkpoint.bin"))?;
    let data_dir = a
        .data
        .clone()
        .or(config.data.clone())
        .ok_or_else(|| Error::ConfigInvalid("no dataset directory; pass --data".into()))?;
    let (train, test) = load_pair(&data_dir)?;
    let exec = execution(&a.exec);
    let counts =
        count_bias(train.labels(), train.bias_factors(), train.manifest.palette.colors.len(), params.spec.classes)?;
    let table = margins_from_counts(&counts, modbias::margin::DEFAULT_EPSILON)?;
    let margins = match a.margins.as_ref().or(config.margins.as_ref()) {
        Some(p) => load_margin_table(p)?,
        None => table.clone(),
    };
    let eval = exec.install(a.exec.jobs, || evaluate(&params, &test, &config.loss, Some(&margins), exec))?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join("diagnostics"));
    create_dir(&out)?;

    let distribution = match a.distribution {
        DistributionArg::MeanScores => ErrorDistribution::MeanScores,
        DistributionArg::ArgmaxHistogram => ErrorDistribution::ArgmaxHistogram,
    };
    let jsd = bias_jsd_report(&eval.predictions, &counts, distribution)?;
    write_jsd_csv(&out.join("jsd.csv"), &jsd)?;

    let (features, tags) = extract_features(&params, &test, None, exec)?;
    let mut cosines = Vec::with_capacity(features.len());
    let mut rows = Vec::with_capacity(features.len());
    for (f, k) in features.iter().zip(test.bias_factors()) {
        if let Ok(c) = cosine_logits(params.head(), f, config.loss.norm_epsilon) {
            cosines.push(c);
            rows.push(margins.row(usize::from(*k)).to_vec());
        }
    }
    let scale = a.scale.unwrap_or(config.loss.scale);
    let sharpness = sharpness_compare(&cosines, &rows, scale, &KD_TEMPERATURES)?;
    write_sharpness_csv(&out.join("sharpness.csv"), &sharpness)?;

    let projection = match a.projection {
        ProjectionArg::Linear2d => Projection::Linear2d,
        ProjectionArg::CosineAngle => Projection::CosineAngle { first: a.classes[0], second: a.classes[1] },
    };
    let (kept, kept_tags): (Vec<Vec<f64>>, Vec<(u8, u8)>) =
        features.into_iter().zip(tags).filter(|(_, (_, k))| a.factor.is_none_or(|f| f == *k)).unzip();
    let points = project(&kept, &kept_tags, params.head(), projection)?;
    write_embedding_csv(&out.join("embedding.csv"), &points)?;
    if a.svg {
        write_text(&out.join("jsd.svg"), &jsd_svg(&jsd, "JSD of wrong predictions per color"))?;
        write_text(&out.join("embedding.svg"), &embedding_svg(&points, "Test feature embedding"))?;
    }
    let mean_jsd = jsd.mean();
    let with_errors = jsd.factors.iter().filter(|f| f.jsd_bits.is_some()).count();
    let entropies: serde_json::Map<String, serde_json::Value> =
        sharpness.profiles.iter().map(|p| (p.method.clone(), p.entropy_bits.into())).collect();
    let summary = serde_json::json!({
        "test_accuracy": eval.accuracy,
        "mean_jsd_bits": mean_jsd,
        "factors_with_errors": with_errors,
        "class_separation": class_separation(&points),
        "sharpness_entropy_bits": entropies,
    });
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    write_text(&out.join("summary.json"), &text)?;
    match mean_jsd {
        Some(v) => println!("mean JSD {v:.4} bits over {with_errors} colors"),
        None => println!("no wrong predictions"),
    }
    Ok(())
}
