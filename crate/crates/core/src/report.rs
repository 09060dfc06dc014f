//! Serialization helpers shared by the CLI and the library's `to_json`
//! methods: reproducible float formatting, atomic file writes, and input
//! hashing for reports.
//!
//! All floats are emitted with 17 significant digits so that identical runs
//! produce byte-identical artifacts and values round-trip exactly.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Compact JSON formatter that pins `f64` output to 17 significant digits.
struct SigDigitFormatter;

impl serde_json::ser::Formatter for SigDigitFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            // Reports never carry non-finite values; `null` keeps the
            // document well-formed if one ever slips through.
            writer.write_all(b"null")
        }
    }
}

/// Serializes with the pinned float format. Panics only on non-serializable
/// types, which does not occur for the crate's report structs.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigitFormatter);
    value.serialize(&mut ser).expect("report serialization cannot fail");
    out.push(b'\n');
    String::from_utf8(out).expect("serde_json emits UTF-8")
}

/// Formats one float the same way the JSON emitter does (used for CSV).
pub fn format_float(value: f64) -> String {
    format!("{value:.16e}")
}

/// Writes a file atomically: the content lands under a temporary name in
/// the same directory and is renamed over the destination.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            tempfile::NamedTempFile::new_in(d)?
        }
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
