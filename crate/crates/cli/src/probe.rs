//! `loss-probe`: evaluates one loss kernel on hand-written values.

use std::io::Write;
use std::path::Path;

use modbias::loss::{head_loss, LossConfig, LossGrad};
use modbias::{Error, Result};

use crate::commands::loss_kind;
use crate::ProbeArgs;

#[derive(Debug, Default, PartialEq)]
pub struct ProbeInput {
    pub w: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub m: Option<Vec<f64>>,
}

/// Reads headerless rows tagged `w`, `x`, `y` or `m` in the first field.
pub fn read_input(path: &Path) -> Result<ProbeInput> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_path(path)?;
    let mut input = ProbeInput::default();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(idx + 1, |p| p.line() as usize);
        let values = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| Error::Parse { line, message: format!("{v:?}: {e}") }))
            .collect::<Result<Vec<f64>>>()?;
        match rec.get(0) {
            Some("w") => input.w.push(values),
            Some("x") => input.x = values,
            Some("y") => input.y = values,
            Some("m") => input.m = Some(values),
            Some("") | None => {}
            Some(tag) => return Err(Error::Parse { line, message: format!("unknown row tag {tag:?}") }),
        }
    }
    Ok(input)
}

pub fn evaluate(input: &ProbeInput, cfg: &LossConfig) -> Result<LossGrad> {
    let d = input.x.len();
    if let Some(row) = input.w.iter().find(|r| r.len() != d) {
        return Err(Error::ShapeMismatch(format!("weight row of length {} for dimension {d}", row.len())));
    }
    if input.w.len() != input.y.len() {
        return Err(Error::ShapeMismatch(format!("{} weight rows for {} targets", input.w.len(), input.y.len())));
    }
    let w: Vec<f64> = input.w.concat();
    head_loss(cfg, &w, &input.x, &input.y, input.m.as_deref())
}

pub fn write_output(out: &mut dyn Write, g: &LossGrad) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantity", "index", "value"])?;
    w.write_record(["loss", "0", &g.loss.to_string()])?;
    for (name, values) in [("prob", &g.probs), ("dl_dx", &g.dl_dx), ("dl_dw", &g.dl_dw)] {
        for (i, v) in values.iter().enumerate() {
            w.write_record([name, &i.to_string(), &v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::Io { path: "<output>".into(), source: e })
}

pub fn run(a: ProbeArgs) -> Result<()> {
    let input = read_input(&a.input)?;
    let cfg =
        LossConfig { kind: loss_kind(a.loss), scale: a.scale, fixed_margin: a.margin, norm_epsilon: a.norm_epsilon };
    cfg.validate()?;
    let g = evaluate(&input, &cfg)?;
    match &a.out {
        Some(path) => {
            let mut file = std::fs::File::create(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            write_output(&mut file, &g)
        }
        None => write_output(&mut std::io::stdout().lock(), &g),
    }
}
