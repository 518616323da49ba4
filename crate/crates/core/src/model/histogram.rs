use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{config_err, Error, Result};

/// Binned delay histogram. Bin `i` is centred on `offset_ps + i * bin_width_ps`
/// and covers `[center - w/2, center - w/2 + w)` with `w/2` rounded down.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoincidenceHistogram {
    pub bin_width_ps: i64,
    pub offset_ps: i64,
    pub counts: Vec<u64>,
}

impl CoincidenceHistogram {
    pub fn zeros(bin_width_ps: i64, offset_ps: i64, n_bins: usize) -> Self {
        Self {
            bin_width_ps,
            offset_ps,
            counts: vec![0; n_bins],
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bin_center(&self, i: usize) -> i64 {
        self.offset_ps + i as i64 * self.bin_width_ps
    }

    /// Index of the bin that contains `delay_ps`, if inside the histogram.
    pub fn bin_of(&self, delay_ps: i64) -> Option<usize> {
        let lo = self.offset_ps - self.bin_width_ps / 2;
        if delay_ps < lo {
            return None;
        }
        let i = ((delay_ps - lo) / self.bin_width_ps) as usize;
        (i < self.counts.len()).then_some(i)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.bin_width_ps != other.bin_width_ps
            || self.offset_ps != other.offset_ps
            || self.counts.len() != other.counts.len()
        {
            return Err(config_err(format!(
                "cannot merge histograms with binning ({}, {}, {}) and ({}, {}, {})",
                self.bin_width_ps,
                self.offset_ps,
                self.counts.len(),
                other.bin_width_ps,
                other.offset_ps,
                other.counts.len()
            )));
        }
        Ok(())
    }

    pub fn merge_from(&mut self, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = String::with_capacity(self.counts.len() * 16 + 32);
        buf.push_str("bin_center_ps,counts\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(buf, "{},{}", self.bin_center(i), c);
        }
        out.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut centers = Vec::new();
        let mut counts = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if lineno == 0 {
                if line != "bin_center_ps,counts" {
                    return Err(Error::Format(format!("unexpected histogram header {line:?}")));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (c, n) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("line {}: expected two fields", lineno + 1)))?;
            let parse_err = |e: std::num::ParseIntError| Error::Format(format!("line {}: {e}", lineno + 1));
            centers.push(c.trim().parse::<i64>().map_err(parse_err)?);
            counts.push(n.trim().parse::<u64>().map_err(parse_err)?);
        }
        if centers.len() < 2 {
            return Err(Error::Format("histogram needs at least two bins".into()));
        }
        let width = centers[1] - centers[0];
        if width <= 0 || centers.windows(2).any(|w| w[1] - w[0] != width) {
            return Err(Error::Format("bin centres are not evenly spaced".into()));
        }
        Ok(Self {
            bin_width_ps: width,
            offset_ps: centers[0],
            counts,
        })
    }
}

/// Element-wise sum of two identically binned histograms.
pub fn merge_histograms(a: &CoincidenceHistogram, b: &CoincidenceHistogram) -> Result<CoincidenceHistogram> {
    let mut out = a.clone();
    out.merge_from(b)?;
    Ok(out)
}
