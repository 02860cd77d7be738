//! Patch extraction (im2col) and its overlap-summing adjoint (col2im).
//!
//! A sample row linearizes a (C, H, W) volume; im2col expands it to a
//! (C*R*S) x (P*Q) matrix whose column j is the receptive field of output
//! position j, ordered row-major over P then Q. Padded positions read as 0.

use super::ConvParams;

/// Dense patch matrix, row-major (C*R*S) x (P*Q), from one sample row.
pub(crate) fn dense_patches(row: &[f64], p: &ConvParams) -> Vec<f64> {
    let (c_in, h_in, w_in) = (p.shape_in.c, p.shape_in.h, p.shape_in.w);
    let (r_k, s_k) = p.kernel;
    let (sh, sw) = p.stride;
    let (ph, pw) = p.pad;
    let (p_out, q_out) = p.out;
    let pq = p_out * q_out;
    let mut out = vec![0.0; p.patch_rows() * pq];
    for c in 0..c_in {
        for r in 0..r_k {
            for s in 0..s_k {
                let crs = (c * r_k + r) * s_k + s;
                let dst = &mut out[crs * pq..(crs + 1) * pq];
                for po in 0..p_out {
                    let h = po * sh + r;
                    if h < ph || h - ph >= h_in {
                        continue;
                    }
                    let h = h - ph;
                    for qo in 0..q_out {
                        let w = qo * sw + s;
                        if w < pw || w - pw >= w_in {
                            continue;
                        }
                        dst[po * q_out + qo] = row[(c * h_in + h) * w_in + (w - pw)];
                    }
                }
            }
        }
    }
    out
}

/// Patch rows built straight from one CSR row's stored entries, never
/// materializing the dense input. `rows[crs]` lists (pq, value) pairs in
/// ascending pq order.
pub(crate) fn sparse_patches(
    cols: &[usize],
    vals: &[f64],
    p: &ConvParams,
) -> Vec<Vec<(usize, f64)>> {
    let (h_in, w_in) = (p.shape_in.h, p.shape_in.w);
    let (r_k, s_k) = p.kernel;
    let (sh, sw) = p.stride;
    let (ph, pw) = p.pad;
    let (p_out, q_out) = p.out;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p.patch_rows()];
    for (&flat, &v) in cols.iter().zip(vals) {
        let c = flat / (h_in * w_in);
        let rem = flat % (h_in * w_in);
        let h = rem / w_in;
        let w = rem % w_in;
        // Find every kernel offset (r, s) whose window covers (h, w).
        for r in 0..r_k {
            let num = h + ph;
            if num < r || (num - r) % sh != 0 {
                continue;
            }
            let po = (num - r) / sh;
            if po >= p_out {
                continue;
            }
            for s in 0..s_k {
                let num = w + pw;
                if num < s || (num - s) % sw != 0 {
                    continue;
                }
                let qo = (num - s) / sw;
                if qo >= q_out {
                    continue;
                }
                let crs = (c * r_k + r) * s_k + s;
                let pq = po * q_out + qo;
                // Stored entries arrive in ascending (c,h,w), and within one
                // (c,r,s) row the map (h,w) -> (p,q) is monotone, so pushes
                // land already sorted.
                debug_assert!(rows[crs].last().map_or(true, |&(q, _)| q < pq));
                rows[crs].push((pq, v));
            }
        }
    }
    rows
}

/// Adds the overlap-sum of a (C*R*S) x (P*Q) gradient back onto a sample
/// row. Positions covered by several windows accumulate all contributions;
/// padded positions are dropped.
pub(crate) fn add_col2im(dcol: &[f64], p: &ConvParams, out_row: &mut [f64]) {
    let (c_in, h_in, w_in) = (p.shape_in.c, p.shape_in.h, p.shape_in.w);
    let (r_k, s_k) = p.kernel;
    let (sh, sw) = p.stride;
    let (ph, pw) = p.pad;
    let (p_out, q_out) = p.out;
    let pq = p_out * q_out;
    for c in 0..c_in {
        for r in 0..r_k {
            for s in 0..s_k {
                let crs = (c * r_k + r) * s_k + s;
                let src = &dcol[crs * pq..(crs + 1) * pq];
                for po in 0..p_out {
                    let h = po * sh + r;
                    if h < ph || h - ph >= h_in {
                        continue;
                    }
                    let h = h - ph;
                    for qo in 0..q_out {
                        let w = qo * sw + s;
                        if w < pw || w - pw >= w_in {
                            continue;
                        }
                        out_row[(c * h_in + h) * w_in + (w - pw)] += src[po * q_out + qo];
                    }
                }
            }
        }
    }
}
