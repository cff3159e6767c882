//! Artifact output: atomic writes, versioned JSON, CSV and gnuplot scripts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Adds `"schema": 1` to an object.
pub fn versioned(mut v: serde_json::Value) -> serde_json::Value {
    if let Some(obj) = v.as_object_mut() {
        obj.insert("schema".into(), 1.into());
    }
    v
}

/// Output directory that records every artifact written into it.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Artifacts { dir, written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        write_atomic(&p, text.as_bytes())?;
        self.written.push(p.clone());
        Ok(p)
    }

    /// Pretty JSON with a `"schema": 1` field.
    pub fn json(&mut self, name: &str, v: serde_json::Value) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(&versioned(v))?;
        s.push('\n');
        self.text(name, &s)
    }
}

/// Gnuplot script plotting `mu` against `lambda` with the plateau line.
pub fn curve_plot_script(csv: &str, plateau: f64, title: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set key top right\n\
         set xlabel 'lambda'\n\
         set ylabel 'mu'\n\
         set title '{title}'\n\
         plateau = {plateau}\n\
         plot '{csv}' using 1:2 skip 1 with linespoints title 'mu(lambda)', \\\n     plateau with lines dashtype 2 title 'plateau'\n"
    )
}

/// Gnuplot script for a margin curve on logarithmic `delta_tilde`.
pub fn margin_plot_script(csv: &str, title: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set logscale x\n\
         set xlabel 'delta_tilde'\n\
         set ylabel 'margin'\n\
         set title '{title}'\n\
         plot '{csv}' using 1:2 skip 1 with linespoints title 'worst margin', 0 with lines dashtype 2 notitle\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        let names: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn json_artifacts_carry_schema() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::new(dir.path()).unwrap();
        let p = a.json("x.json", serde_json::json!({"value": 2.5})).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(a.written().len(), 1);
    }
}
