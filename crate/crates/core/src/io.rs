//! CSV readers and writers for sites, replicated data and orderings.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back reproduces every value bit for bit.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::spatial::{OrderingPlan, SiteSet};
use crate::DataMatrix;

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::invalid(format!("line {line}: cannot parse {what} `{field}`")))
}

fn parse_id(field: &str, line: u64) -> Result<u64> {
    field.trim().parse::<u64>().map_err(|_| Error::invalid(format!("line {line}: site id `{field}` is not an integer")))
}

/// Sites from CSV with header `id,x,y`.
pub fn read_sites_from<R: Read>(reader: R) -> Result<SiteSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != ["id", "x", "y"] {
        return Err(Error::invalid(format!("sites header must be `id,x,y`, found `{}`", header.join(","))));
    }
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        ids.push(parse_id(&rec[0], line)?);
        coords.push([parse_f64(&rec[1], "x", line)?, parse_f64(&rec[2], "y", line)?]);
    }
    SiteSet::with_ids(ids, coords)
}

pub fn read_sites(path: &Path) -> Result<SiteSet> {
    read_sites_from(File::open(path)?)
}

pub fn write_sites_to<W: Write>(writer: W, sites: &SiteSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "x", "y"])?;
    for (id, c) in sites.ids().iter().zip(sites.coords()) {
        w.write_record([id.to_string(), c[0].to_string(), c[1].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sites(path: &Path, sites: &SiteSet) -> Result<()> {
    write_sites_to(File::create(path)?, sites)
}

/// Replicated data: header of site ids, then one row per replicate. Returns
/// the column ids in file order.
pub fn read_data_from<R: Read>(reader: R) -> Result<(Vec<u64>, DataMatrix)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let ids: Vec<u64> = rdr.headers()?.iter().map(|h| parse_id(h, 1)).collect::<Result<_>>()?;
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != ids.len() {
            return Err(Error::invalid(format!("line {line}: expected {} values, found {}", ids.len(), rec.len())));
        }
        for f in rec.iter() {
            values.push(parse_f64(f, "value", line)?);
        }
        rows += 1;
    }
    Ok((ids.clone(), DataMatrix::from_row_slice(rows, ids.len(), &values)))
}

/// Data with columns reordered to match `sites`. Every site must appear
/// exactly once in the header; extra columns are an error.
pub fn read_data(path: &Path, sites: &SiteSet) -> Result<DataMatrix> {
    let (ids, raw) = read_data_from(File::open(path)?)?;
    align_columns(&ids, &raw, sites)
}

pub fn align_columns(ids: &[u64], raw: &DataMatrix, sites: &SiteSet) -> Result<DataMatrix> {
    if ids.len() != sites.len() {
        return Err(Error::DimensionMismatch { expected: sites.len(), got: ids.len() });
    }
    let mut col_of = vec![usize::MAX; sites.len()];
    for (c, id) in ids.iter().enumerate() {
        let s = sites.index_of(*id).ok_or_else(|| Error::invalid(format!("data column {id} is not a known site")))?;
        if col_of[s] != usize::MAX {
            return Err(Error::invalid(format!("data column {id} appears twice")));
        }
        col_of[s] = c;
    }
    Ok(DataMatrix::from_fn(raw.nrows(), sites.len(), |i, j| raw[(i, col_of[j])]))
}

pub fn write_data_to<W: Write>(writer: W, sites: &SiteSet, data: &DataMatrix) -> Result<()> {
    if data.ncols() != sites.len() {
        return Err(Error::DimensionMismatch { expected: sites.len(), got: data.ncols() });
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(sites.ids().iter().map(u64::to_string))?;
    for i in 0..data.nrows() {
        w.write_record(data.row(i).iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_data(path: &Path, sites: &SiteSet, data: &DataMatrix) -> Result<()> {
    write_data_to(File::create(path)?, sites, data)
}

/// Ordering as `rank,id`, rank starting at 1.
pub fn write_ordering_to<W: Write>(writer: W, sites: &SiteSet, plan: &OrderingPlan) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "id"])?;
    for (r, &s) in plan.perm().iter().enumerate() {
        w.write_record([(r + 1).to_string(), sites.ids()[s].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ordering(path: &Path, sites: &SiteSet, plan: &OrderingPlan) -> Result<()> {
    write_ordering_to(File::create(path)?, sites, plan)
}

/// Validation ids, one integer per line (a header line `id` is optional).
pub fn read_ids_from<R: Read>(reader: R) -> Result<Vec<u64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if k == 0 && &rec[0] == "id" {
            continue;
        }
        out.push(parse_id(&rec[0], k as u64 + 1)?);
    }
    Ok(out)
}

pub fn read_ids(path: &Path) -> Result<Vec<u64>> {
    read_ids_from(File::open(path)?)
}
