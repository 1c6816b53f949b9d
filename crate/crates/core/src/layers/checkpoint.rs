//! Self-describing checkpoints.
//!
//! ```text
//! platerec-checkpoint 1
//! endianness little f32
//! meta <free text, e.g. the network description>
//! tensor <d0> <d1> ...
//! end-header
//! <raw blocks, one per tensor line, same order>
//! ```
//!
//! Values are stored as 32-bit floats, so a round trip is exact only to f32
//! precision.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{NetworkSpec, Recognizer, Sequential};
use crate::tensor::{Rng, Tensor};

const MAGIC: &str = "platerec-checkpoint 1";
const END: &str = "end-header";

pub fn write_tensors(path: &Path, meta: &[String], tensors: &[&Tensor]) -> Result<()> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str("endianness little f32\n");
    for m in meta {
        header.push_str("meta ");
        header.push_str(m);
        header.push('\n');
    }
    for t in tensors {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("tensor {}\n", dims.join(" ")));
    }
    header.push_str(END);
    header.push('\n');
    let mut bytes = header.into_bytes();
    for t in tensors {
        for &v in t.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Returns the meta lines and the tensors in file order.
pub fn read_tensors(path: &Path) -> Result<(Vec<String>, Vec<Tensor>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let marker = format!("\n{END}\n");
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| Error::Checkpoint(format!("{}: header terminator missing", path.display())))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::Checkpoint(format!("{}: header is not text", path.display())))?;
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint", path.display())));
    }
    let mut meta = Vec::new();
    let mut shapes = Vec::new();
    for line in lines {
        if let Some(m) = line.strip_prefix("meta ") {
            meta.push(m.to_string());
        } else if let Some(dims) = line.strip_prefix("tensor ") {
            let shape: Vec<usize> = dims
                .split_whitespace()
                .map(|d| d.parse().map_err(|_| Error::Checkpoint(format!("bad tensor line `{line}`"))))
                .collect::<Result<_>>()?;
            shapes.push(shape);
        } else if line.starts_with("endianness") {
            if line != "endianness little f32" {
                return Err(Error::Checkpoint(format!("unsupported encoding `{line}`")));
            }
        } else {
            return Err(Error::Checkpoint(format!("unexpected header line `{line}`")));
        }
    }
    let mut body = &bytes[split + marker.len()..];
    let need: usize = shapes.iter().map(|s| s.iter().product::<usize>() * 4).sum();
    if body.len() != need {
        return Err(Error::Checkpoint(format!(
            "{}: {} data bytes, header declares {need}{}",
            path.display(),
            body.len(),
            if body.len() < need { " (truncated)" } else { "" }
        )));
    }
    let mut tensors = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = body[..n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        body = &body[n * 4..];
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    Ok((meta, tensors))
}

fn assign(targets: Vec<&mut Tensor>, loaded: &mut std::vec::IntoIter<Tensor>) -> Result<()> {
    for t in targets {
        let src = loaded
            .next()
            .ok_or_else(|| Error::Checkpoint("checkpoint has fewer tensors than the network".into()))?;
        if src.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor shape {:?} does not match network {:?}",
                src.shape(),
                t.shape()
            )));
        }
        *t = src;
    }
    Ok(())
}

pub fn save_recognizer(net: &Recognizer, path: &Path) -> Result<()> {
    let mut meta = vec!["model recognizer".to_string()];
    meta.extend(net.spec.to_lines());
    let mut tensors = net.params();
    tensors.extend(net.buffers());
    write_tensors(path, &meta, &tensors)
}

/// Rebuilds the recognizer from the stored description and fills in its
/// parameters and batch-norm statistics.
pub fn load_recognizer(path: &Path) -> Result<Recognizer> {
    let (meta, tensors) = read_tensors(path)?;
    if meta.first().map(String::as_str) != Some("model recognizer") {
        return Err(Error::Checkpoint(format!("{}: not a recognizer checkpoint", path.display())));
    }
    let spec = NetworkSpec::from_lines(meta[1..].iter().map(String::as_str))?;
    let mut net = crate::layers::build_crnn(&spec, &mut Rng::new(0))?;
    let expected = net.params().len() + net.buffers().len();
    if tensors.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{}: {} tensors, network needs {expected}",
            path.display(),
            tensors.len()
        )));
    }
    let mut it = tensors.into_iter();
    assign(net.params_mut(), &mut it)?;
    assign(net.buffers_mut(), &mut it)?;
    Ok(net)
}

pub fn save_sequential(net: &Sequential, tag: &str, path: &Path) -> Result<()> {
    let mut meta = vec![format!("model {tag}")];
    meta.extend(net.layers.iter().map(|l| format!("layer {}", l.describe())));
    let mut tensors = net.params();
    tensors.extend(net.buffers());
    write_tensors(path, &meta, &tensors)
}

/// Loads parameters into an existing network of the same architecture.
pub fn load_into(net: &mut Sequential, path: &Path) -> Result<()> {
    let (meta, tensors) = read_tensors(path)?;
    let layers: Vec<&str> = meta.iter().filter_map(|m| m.strip_prefix("layer ")).collect();
    let want: Vec<String> = net.layers.iter().map(|l| l.describe()).collect();
    if layers != want {
        return Err(Error::Checkpoint(format!(
            "{}: stored architecture does not match the network",
            path.display()
        )));
    }
    if tensors.len() != net.params().len() + net.buffers().len() {
        return Err(Error::Checkpoint(format!("{}: tensor count mismatch", path.display())));
    }
    let mut it = tensors.into_iter();
    assign(net.params_mut(), &mut it)?;
    assign(net.buffers_mut(), &mut it)?;
    Ok(())
}
