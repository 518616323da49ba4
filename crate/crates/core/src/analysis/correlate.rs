//! Streaming start–stop correlation of two sorted tag streams.

use crate::error::{config_err, Result};
use crate::model::{tags::check_sorted, CoincidenceHistogram, TagStream};
use crate::par;

/// Tags of `a` handled by one parallel work item.
const CHUNK_TAGS: usize = 1 << 16;

/// Histogram of `t_b − t_a` over `[−max_delay, +max_delay]`.
pub fn cross_correlate(a: &TagStream, b: &TagStream, max_delay_ps: u64, bin_width_ps: u64) -> Result<CoincidenceHistogram> {
    if bin_width_ps == 0 || !max_delay_ps.is_multiple_of(bin_width_ps) {
        return Err(config_err(format!(
            "bin width {bin_width_ps} ps must divide max delay {max_delay_ps} ps"
        )));
    }
    let m = max_delay_ps as i64;
    cross_correlate_range(a, b, -m, m, bin_width_ps)
}

fn empty_histogram(lo_center: i64, hi_center: i64, bin_width_ps: u64) -> Result<CoincidenceHistogram> {
    let w = bin_width_ps as i64;
    if w <= 0 || hi_center < lo_center || (hi_center - lo_center) % w != 0 {
        return Err(config_err(format!(
            "bin centers {lo_center}..={hi_center} ps are not on a {bin_width_ps} ps grid"
        )));
    }
    let n = ((hi_center - lo_center) / w + 1) as usize;
    Ok(CoincidenceHistogram::zeros(w, lo_center, n))
}

fn validated(s: &TagStream) -> Result<&[u64]> {
    check_sorted(s.channel_id, s.tags())?;
    Ok(s.tags())
}

// Two-pointer sweep of `a` against all of `b`; `start` is the first index of
// `b` that can pair with `a[0]`.
fn sweep(a: &[u64], b: &[u64], mut start: usize, hist: &mut CoincidenceHistogram) {
    let w = hist.bin_width_ps;
    let lo = hist.offset_ps - w / 2;
    let span = w * hist.counts.len() as i64;
    for &ta in a {
        let ta = ta as i64;
        while start < b.len() && (b[start] as i64) - ta < lo {
            start += 1;
        }
        let mut j = start;
        while j < b.len() {
            let d = b[j] as i64 - ta - lo;
            if d >= span {
                break;
            }
            hist.counts[(d / w) as usize] += 1;
            j += 1;
        }
    }
}

fn first_partner(b: &[u64], ta: u64, lo: i64) -> usize {
    let ta = ta as i64;
    b.partition_point(|&tb| (tb as i64) - ta < lo)
}

/// Single-threaded correlation with bin centers `lo_center..=hi_center`.
pub fn cross_correlate_sequential(
    a: &TagStream,
    b: &TagStream,
    lo_center: i64,
    hi_center: i64,
    bin_width_ps: u64,
) -> Result<CoincidenceHistogram> {
    let (ta, tb) = (validated(a)?, validated(b)?);
    let mut hist = empty_histogram(lo_center, hi_center, bin_width_ps)?;
    let lo = hist.offset_ps - hist.bin_width_ps / 2;
    if let Some(&first) = ta.first() {
        sweep(ta, tb, first_partner(tb, first, lo), &mut hist);
    }
    Ok(hist)
}

/// Correlation with bin centers `lo_center..=hi_center`. Splits `a` into
/// contiguous ranges and merges the partial histograms.
pub fn cross_correlate_range(
    a: &TagStream,
    b: &TagStream,
    lo_center: i64,
    hi_center: i64,
    bin_width_ps: u64,
) -> Result<CoincidenceHistogram> {
    let (ta, tb) = (validated(a)?, validated(b)?);
    let template = empty_histogram(lo_center, hi_center, bin_width_ps)?;
    let lo = template.offset_ps - template.bin_width_ps / 2;
    let hist = par::fold_chunks(
        ta,
        CHUNK_TAGS,
        || template.clone(),
        |mut h, chunk| {
            sweep(chunk, tb, first_partner(tb, chunk[0], lo), &mut h);
            h
        },
        |mut a, b| {
            for (x, y) in a.counts.iter_mut().zip(&b.counts) {
                *x += y;
            }
            a
        },
    );
    Ok(hist)
}
