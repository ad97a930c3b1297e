//! CSV and JSON persistence with a provenance header.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use collab_core::{Grid2D, GridFunction};
use serde::Serialize;

/// Config digest and seed stamped on every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn header_line(&self) -> String {
        format!("# config_sha256={},seed={}", self.config_sha256, self.seed)
    }
}

/// Twelve significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.11e}")
}

pub struct CsvSink {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvSink {
    pub fn create(path: &Path, prov: &Provenance, columns: &[&str]) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "{}", prov.header_line())?;
        let mut inner = csv::Writer::from_writer(buf);
        inner.write_record(columns)?;
        Ok(Self { path: path.to_path_buf(), inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).with_context(|| format!("writing {}", self.path.display()))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.inner.flush()?;
        Ok(self.path)
    }
}

/// Writes `x,y,value` for every node, `y`-major.
pub fn write_grid(path: &Path, prov: &Provenance, f: &GridFunction) -> Result<PathBuf> {
    let g = f.grid;
    let mut sink = CsvSink::create(path, prov, &["x", "y", "value"])?;
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let (x, y) = g.coords(i, j);
            sink.row([num(x), num(y), num(f.at(i, j))])?;
        }
    }
    sink.finish()
}

/// Reads a `x,y,value` file written by [`write_grid`] onto `grid`.
pub fn read_grid(path: &Path, grid: Grid2D) -> Result<GridFunction> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).with_context(|| format!("{}: missing column '{name}'", path.display()))
    };
    let (cx, cy, cv) = (col("x")?, col("y")?, col("value")?);
    let mut data = vec![f64::NAN; grid.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| -> Result<f64> {
            rec.get(c)
                .unwrap_or("")
                .parse::<f64>()
                .with_context(|| format!("{}: record {}: bad number", path.display(), line + 1))
        };
        let (x, y, v) = (field(cx)?, field(cy)?, field(cv)?);
        let i = (x / grid.step).round();
        let j = (y / grid.step).round();
        if i < 0.0 || j < 0.0 || i > grid.nx as f64 || j > grid.ny as f64 || (i * grid.step - x).abs() > 1e-6 * grid.step
            || (j * grid.step - y).abs() > 1e-6 * grid.step
        {
            bail!("{}: node ({x}, {y}) is not on the configured grid", path.display());
        }
        data[grid.idx(i as usize, j as usize)] = v;
    }
    if let Some(k) = data.iter().position(|v| v.is_nan()) {
        let (i, j) = (k % (grid.nx + 1), k / (grid.nx + 1));
        let (x, y) = grid.coords(i, j);
        bail!("{}: no value for node ({x}, {y})", path.display());
    }
    Ok(GridFunction::from_samples(grid, data)?)
}

/// JSON document wrapping `body` with the provenance fields.
pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, body: &T) -> Result<PathBuf> {
    #[derive(Serialize)]
    struct Stamped<'a, T> {
        #[serde(flatten)]
        prov: &'a Provenance,
        #[serde(flatten)]
        body: &'a T,
    }
    let mut text = serde_json::to_string_pretty(&Stamped { prov, body })?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

/// JSON-lines log whose first record is the provenance.
pub struct JsonLines {
    out: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path, prov: &Provenance) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, prov)?;
        out.write_all(b"\n")?;
        Ok(Self { out })
    }

    pub fn record<T: Serialize>(&mut self, rec: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
