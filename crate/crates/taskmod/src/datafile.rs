//! Dataset files: the generating spec, the label matrix and the inputs,
//! stored as records of the checkpoint container. Integer spec fields are
//! stored as exact small floats except the seed, which keeps its raw bits.

use std::path::Path;

use taskmod_core::{AttributeSpec, Dataset, InputKind, Tensor};

use crate::checkpoint::{encode, read_records, Record};
use crate::error::{AppError, AppResult};

fn scalar(v: f64) -> Tensor {
    Tensor::vector(vec![v])
}

pub fn dataset_records(ds: &Dataset) -> Vec<Record> {
    let s = &ds.spec;
    let t = s.attribute_count;
    let kind = match s.input_kind {
        InputKind::Vector { dim } => vec![0.0, dim as f64, 0.0],
        InputKind::Image { height, width } => vec![1.0, height as f64, width as f64],
    };
    let shape = s.input_kind.shape();
    let mut input_shape = vec![ds.len()];
    input_shape.extend_from_slice(&shape);
    let inputs: Vec<f64> = ds.inputs.iter().flat_map(|x| x.values().iter().copied()).collect();
    vec![
        Record::new("spec/attribute_count", scalar(t as f64)),
        Record::new("spec/sample_count", scalar(s.sample_count as f64)),
        Record::new("spec/input_kind", Tensor::vector(kind)),
        Record::new("spec/noise_sigma", scalar(s.noise_sigma)),
        Record::new("spec/seed", scalar(f64::from_bits(s.seed))),
        Record::new(
            "spec/correlation",
            Tensor::new(vec![t, t], s.correlation.clone()).expect("t x t"),
        ),
        Record::new(
            "labels",
            Tensor::new(vec![ds.len(), t], ds.labels.iter().map(|&l| f64::from(l)).collect()).expect("n x t"),
        ),
        Record::new("inputs", Tensor::new(input_shape, inputs).expect("inputs")),
    ]
}

pub fn dataset_bytes(ds: &Dataset) -> Vec<u8> {
    let records = dataset_records(ds);
    encode(records.iter().map(|r| (r.name.as_str(), &r.tensor)))
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> AppResult<()> {
    std::fs::write(path, dataset_bytes(ds)).map_err(|e| AppError::io(path, e))
}

fn as_count(v: f64, what: &str) -> Result<usize, String> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as usize)
    } else {
        Err(format!("{what} is not a count: {v}"))
    }
}

pub fn dataset_from_records(records: &[Record]) -> Result<Dataset, String> {
    let get = |name: &str| {
        records
            .iter()
            .find(|r| r.name == name)
            .map(|r| &r.tensor)
            .ok_or_else(|| format!("missing record {name:?}"))
    };
    let one = |name: &str| -> Result<f64, String> {
        let t = get(name)?;
        match t.values() {
            [v] => Ok(*v),
            _ => Err(format!("{name} must hold one value")),
        }
    };
    let t = as_count(one("spec/attribute_count")?, "attribute_count")?;
    let n = as_count(one("spec/sample_count")?, "sample_count")?;
    let input_kind = match get("spec/input_kind")?.values() {
        [k, d, _] if *k == 0.0 => InputKind::Vector {
            dim: as_count(*d, "dim")?,
        },
        [k, h, w] if *k == 1.0 => InputKind::Image {
            height: as_count(*h, "height")?,
            width: as_count(*w, "width")?,
        },
        other => return Err(format!("bad input kind {other:?}")),
    };
    let spec = AttributeSpec {
        attribute_count: t,
        correlation: get("spec/correlation")?.values().to_vec(),
        sample_count: n,
        input_kind,
        noise_sigma: one("spec/noise_sigma")?,
        seed: one("spec/seed")?.to_bits(),
    };
    let labels_t = get("labels")?;
    if labels_t.shape() != [n, t] {
        return Err(format!("labels have shape {:?}, expected [{n}, {t}]", labels_t.shape()));
    }
    let labels = labels_t
        .values()
        .iter()
        .map(|&v| match v {
            0.0 => Ok(0u8),
            1.0 => Ok(1u8),
            _ => Err(format!("label value {v} is not 0 or 1")),
        })
        .collect::<Result<Vec<u8>, String>>()?;
    let inputs_t = get("inputs")?;
    let shape = input_kind.shape();
    let mut expected = vec![n];
    expected.extend_from_slice(&shape);
    if inputs_t.shape() != expected.as_slice() {
        return Err(format!(
            "inputs have shape {:?}, expected {expected:?}",
            inputs_t.shape()
        ));
    }
    let per = input_kind.len();
    let inputs = inputs_t
        .values()
        .chunks_exact(per)
        .map(|c| Tensor::new(shape.clone(), c.to_vec()).expect("shape"))
        .collect();
    let ds = Dataset { spec, inputs, labels };
    ds.validate().map_err(|e| e.to_string())?;
    Ok(ds)
}

/// Reads and validates a dataset file.
pub fn read_dataset(path: &Path) -> AppResult<Dataset> {
    let records = read_records(path)?;
    dataset_from_records(&records).map_err(|reason| AppError::format(path, reason))
}
