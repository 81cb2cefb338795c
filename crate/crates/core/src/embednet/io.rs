//! Per-layer weight files: one little-endian float64 array per parameter, named by its
//! layer path.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::embednet::net::{EmbedNet, NetArch};
use crate::error::{Error, Result};

pub fn weight_file_name(path: &str) -> String {
    format!("{path}.f64")
}

pub fn write_f64_file(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f64_file(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Bundle(format!("{} is not a float64 array", path.display())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Writes every parameter of `net` into `dir`, returning the file names in parameter order.
pub fn save_weights(net: &EmbedNet, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (path, t) in net.named_params() {
        let name = weight_file_name(&path);
        write_f64_file(&dir.join(&name), t.values())?;
        names.push(name);
    }
    Ok(names)
}

/// Rebuilds a network for `arch` and fills it from `dir`.
pub fn load_weights(arch: &NetArch, dir: &Path) -> Result<EmbedNet> {
    let mut net = EmbedNet::new(arch.clone(), 0)?;
    let paths: Vec<String> = net.named_params().into_iter().map(|(p, _)| p).collect();
    for (path, t) in paths.iter().zip(net.params_mut()) {
        let file = dir.join(weight_file_name(path));
        let values = read_f64_file(&file).map_err(|e| Error::Bundle(format!("{}: {e}", file.display())))?;
        if values.len() != t.len() {
            return Err(Error::Bundle(format!(
                "{path}: expected {} values, found {}",
                t.len(),
                values.len()
            )));
        }
        t.values_mut().copy_from_slice(&values);
    }
    Ok(net)
}

/// `epoch,mean_loss` rows with a header.
pub fn write_loss_history(path: &Path, history: &[f64]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "epoch,mean_loss")?;
    for (i, v) in history.iter().enumerate() {
        writeln!(f, "{},{v}", i + 1)?;
    }
    Ok(())
}
