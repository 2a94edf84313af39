//! Plain-text export of a constraint system.
//!
//! Triplets: a `#` header line with the shape, then one `row col value` line
//! per nonzero (zero-based, values in `{:.17e}`).
//! Manifest: a `#` header, then `row ix iy iz` with knot indices.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::scalar::Real;

use super::ConstraintSystem;

pub fn write_triplets<T: Real, W: Write>(system: &ConstraintSystem<T>, mut w: W) -> Result<()> {
    let m = &system.matrix;
    writeln!(w, "# rows {} cols {} nnz {}", m.nrows(), m.ncols(), m.nnz())?;
    for (r, c, v) in m.triplets() {
        writeln!(w, "{r} {c} {:.17e}", v.as_f64())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_index_manifest<T: Real, W: Write>(system: &ConstraintSystem<T>, mut w: W) -> Result<()> {
    writeln!(w, "# row ix iy iz")?;
    for (r, i) in system.active_indices.iter().enumerate() {
        writeln!(w, "{r} {} {} {}", i[0], i[1], i[2])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<stem>.triplets.txt` and `<stem>.indices.txt` next to `stem`.
pub fn write_constraint_export<T: Real>(system: &ConstraintSystem<T>, stem: impl AsRef<Path>) -> Result<()> {
    let stem = stem.as_ref().to_string_lossy().into_owned();
    write_triplets(system, BufWriter::new(File::create(format!("{stem}.triplets.txt"))?))?;
    write_index_manifest(system, BufWriter::new(File::create(format!("{stem}.indices.txt"))?))?;
    Ok(())
}
