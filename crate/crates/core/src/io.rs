//! File formats: spectrum CSV, parameter JSON and endmember library JSON.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{make_tolerance_box, Tolerances};
use crate::spectral::{DispersionParams, ParamBox, Spectrum, WavenumberGrid};
use crate::unmix::{Endmember, EndmemberLibrary};

pub const SPECTRUM_HEADER: &str = "wavenumber,emissivity";
pub const LIBRARY_SCHEMA_VERSION: &str = "1";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `contents`, creating missing parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Parses a `wavenumber,emissivity` CSV. Values outside `[0, 1]` are
/// accepted and flag the spectrum as measured.
pub fn parse_spectrum(text: &str, path: &Path) -> Result<Spectrum> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == SPECTRUM_HEADER => {}
        Some((i, header)) => {
            return Err(parse_err(
                i + 1,
                format!(
                    "expected header `{SPECTRUM_HEADER}`, found `{}`",
                    header.trim()
                ),
            ))
        }
        None => return Err(parse_err(1, "empty file".into())),
    }
    let mut omega = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(parse_err(
                line_no,
                format!("expected 2 fields, found {}", fields.len()),
            ));
        }
        let number = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line_no, format!("invalid {what} `{s}`")))
        };
        let w = number(fields[0], "wavenumber")?;
        if let Some(&prev) = omega.last() {
            if w <= prev {
                return Err(parse_err(
                    line_no,
                    format!("wavenumbers must ascend ({w} after {prev})"),
                ));
            }
        }
        omega.push(w);
        values.push(number(fields[1], "emissivity")?);
    }
    let grid = WavenumberGrid::new(omega).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Spectrum::new(grid.clone(), values.clone()).or_else(|_| Spectrum::measured(grid, values))
}

pub fn read_spectrum(path: &Path) -> Result<Spectrum> {
    parse_spectrum(&read_text(path)?, path)
}

/// CSV text; every value is printed in shortest round-trip form, so reading
/// it back is bit-exact.
pub fn format_spectrum(grid: &WavenumberGrid, values: &[f64]) -> String {
    let mut out = String::with_capacity(32 * values.len());
    out.push_str(SPECTRUM_HEADER);
    out.push('\n');
    for (w, v) in grid.values().iter().zip(values) {
        out.push_str(&format!("{w},{v}\n"));
    }
    out
}

pub fn write_spectrum(spectrum: &Spectrum, path: &Path) -> Result<()> {
    write_text(path, &format_spectrum(spectrum.grid(), spectrum.values()))
}

pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(&read_text(path)?, path)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_text(path, &to_json(value))
}

pub fn read_params(path: &Path) -> Result<DispersionParams> {
    read_json(path)
}

pub fn write_params(params: &DispersionParams, path: &Path) -> Result<()> {
    write_json(params, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryEntry {
    pub name: String,
    pub params: DispersionParams,
    /// Refinement box; the default tolerance box around `params` if absent.
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<ParamBox>,
}

/// On-disk endmember library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryFile {
    pub schema_version: String,
    pub grid: WavenumberGrid,
    pub entries: Vec<LibraryEntry>,
}

impl LibraryFile {
    pub fn from_library(library: &EndmemberLibrary) -> Self {
        Self {
            schema_version: LIBRARY_SCHEMA_VERSION.into(),
            grid: library.grid().clone(),
            entries: library
                .entries()
                .iter()
                .map(|e| LibraryEntry {
                    name: e.name.clone(),
                    params: e.params.clone(),
                    bounds: Some(e.bounds.clone()),
                })
                .collect(),
        }
    }

    pub fn into_library(self) -> Result<EndmemberLibrary> {
        if self.schema_version != LIBRARY_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported library schema_version `{}` (expected `{LIBRARY_SCHEMA_VERSION}`)",
                self.schema_version
            )));
        }
        let entries = self
            .entries
            .into_iter()
            .map(|e| Endmember {
                bounds: e
                    .bounds
                    .unwrap_or_else(|| make_tolerance_box(&e.params, &Tolerances::default())),
                name: e.name,
                params: e.params,
            })
            .collect();
        EndmemberLibrary::new(self.grid, entries)
    }
}

pub fn read_library(path: &Path) -> Result<EndmemberLibrary> {
    let file: LibraryFile = read_json(path)?;
    file.into_library().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_library(library: &EndmemberLibrary, path: &Path) -> Result<()> {
    write_json(&LibraryFile::from_library(library), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem.csv")
    }

    #[test]
    fn minimal_file() {
        let s = parse_spectrum("wavenumber,emissivity\n200,0.9\n210,0.95\n", p()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.values(), &[0.9, 0.95]);
    }

    #[test]
    fn descending_rejected_with_line() {
        let err = parse_spectrum("wavenumber,emissivity\n210,0.9\n200,0.95\n", p()).unwrap_err();
        assert!(err.to_string().starts_with("mem.csv:3:"), "{err}");
    }

    #[test]
    fn malformed_rows() {
        for bad in [
            "wavenumber,emissivity\n200,abc\n210,1\n",
            "wavenumber,emissivity\n200\n210,1\n",
            "wavenumber,emissivity\n200,1,2\n",
            "lambda,emissivity\n200,1\n",
            "",
        ] {
            assert!(parse_spectrum(bad, p()).is_err(), "{bad:?}");
        }
        let err = parse_spectrum("wavenumber,emissivity\n200,0.5\n210,nan\n", p()).unwrap_err();
        assert!(err.to_string().contains(":3:"));
    }

    #[test]
    fn out_of_range_is_measured() {
        let s = parse_spectrum("wavenumber,emissivity\n200,1.01\n210,0.5\n", p()).unwrap();
        assert!(s.is_measured());
    }

    #[test]
    fn unknown_library_field_named() {
        let text = r#"{"schema_version":"1","grid":[1,2],"entries":[],"colour":1}"#;
        let err = parse_json::<LibraryFile>(text, Path::new("lib.json")).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn missing_box_defaults_to_tolerances() {
        let text = r#"{"schema_version":"1","grid":[200,300],"entries":[
            {"name":"a","params":{"axes":[{"eps_r":2.0,"bands":[{"omega0":1000.0,"gamma":0.1,"rho":0.1}]}],"alpha":[1.0]}}]}"#;
        let lib = parse_json::<LibraryFile>(text, Path::new("lib.json"))
            .unwrap()
            .into_library()
            .unwrap();
        let b = &lib.entries()[0].bounds;
        assert!((b.lower()[1] - 999.9).abs() < 1e-9);
    }

    #[test]
    fn schema_version_checked() {
        let text = r#"{"schema_version":"9","grid":[200,300],"entries":[]}"#;
        let file = parse_json::<LibraryFile>(text, Path::new("lib.json")).unwrap();
        assert!(file.into_library().is_err());
    }
}
