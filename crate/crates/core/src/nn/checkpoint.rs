//! Text checkpoints for [`Mlp`].
//!
//! ```text
//! layers = 3 128 128 2
//! activations = tanh tanh identity
//! conditioning = concat-alpha
//! weight 0
//! shape: 128 3
//! ...
//! bias 0
//! shape: 128
//! ...
//! ```
//!
//! `layers` includes the conditioning slot. Weight blocks are written as
//! `[out, in]` matrices.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::mlp::{Activation, Conditioning, Mlp};
use crate::numerics::DenseTensor;

pub fn to_text(model: &Mlp) -> String {
    let mut out = String::new();
    let sizes: Vec<String> = model.sizes().iter().map(usize::to_string).collect();
    let acts: Vec<&str> = model.activations().iter().map(|a| a.name()).collect();
    writeln!(out, "layers = {}", sizes.join(" ")).unwrap();
    writeln!(out, "activations = {}", acts.join(" ")).unwrap();
    writeln!(out, "conditioning = {}", model.conditioning().name()).unwrap();
    for l in 0..model.num_layers() {
        let n_in = model.sizes()[l];
        let n_out = model.sizes()[l + 1];
        let mut w = Vec::with_capacity(n_in * n_out);
        for o in 0..n_out {
            for i in 0..n_in {
                w.push(model.weight(l, o, i));
            }
        }
        let w = DenseTensor::new(vec![n_out, n_in], w).expect("finite parameters");
        writeln!(out, "weight {l}").unwrap();
        out.push_str(&w.to_text());
        let (_, b_off) = model.layer_offsets(l);
        let b = DenseTensor::vector(model.params()[b_off..b_off + n_out].to_vec())
            .expect("finite parameters");
        writeln!(out, "bias {l}").unwrap();
        out.push_str(&b.to_text());
    }
    out
}

pub fn from_text(text: &str) -> Result<Mlp> {
    let mut header = std::collections::HashMap::new();
    let mut sections: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with("weight ") || trimmed.starts_with("bias ") {
            sections.push((trimmed.to_string(), String::new()));
        } else if let Some((_, body)) = sections.last_mut() {
            body.push_str(line);
            body.push('\n');
        } else if let Some((k, v)) = trimmed.split_once('=') {
            header.insert(k.trim().to_string(), v.trim().to_string());
        } else if !trimmed.is_empty() {
            return Err(Error::Parse(format!("unexpected checkpoint line {trimmed:?}")));
        }
    }
    let field = |k: &str| {
        header
            .get(k)
            .ok_or_else(|| Error::Parse(format!("checkpoint missing {k}")))
    };
    let sizes = field("layers")?
        .split_whitespace()
        .map(|s| s.parse::<usize>().map_err(|e| Error::Parse(format!("layers: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let activations = field("activations")?
        .split_whitespace()
        .map(Activation::parse)
        .collect::<Result<Vec<_>>>()?;
    let conditioning = Conditioning::parse(field("conditioning")?)?;
    if sizes.len() < 2 || activations.len() + 1 != sizes.len() {
        return Err(Error::Parse("layers and activations disagree".into()));
    }
    let n_layers = activations.len();
    if sections.len() != 2 * n_layers {
        return Err(Error::Parse(format!(
            "expected {} parameter blocks, found {}",
            2 * n_layers,
            sections.len()
        )));
    }
    let mut params = Vec::new();
    for l in 0..n_layers {
        let (wname, wbody) = &sections[2 * l];
        let (bname, bbody) = &sections[2 * l + 1];
        if *wname != format!("weight {l}") || *bname != format!("bias {l}") {
            return Err(Error::Parse(format!("blocks out of order at layer {l}")));
        }
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let w = DenseTensor::from_text(wbody)?;
        let b = DenseTensor::from_text(bbody)?;
        if w.shape() != [n_out, n_in] || b.shape() != [n_out] {
            return Err(Error::Parse(format!("layer {l} block shapes disagree with header")));
        }
        for i in 0..n_in {
            for o in 0..n_out {
                params.push(w.data()[o * n_in + i]);
            }
        }
        params.extend_from_slice(b.data());
    }
    Mlp::from_parts(sizes, activations, conditioning, params)
}

pub fn save(model: &Mlp, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Mlp> {
    from_text(&std::fs::read_to_string(path)?)
}
