//! Lane-parallel escape-time iteration with a blend mask.
//!
//! All lanes step through one shared loop. Each lane carries an increment that
//! starts at 1 and is ANDed with its "still inside" comparison every
//! iteration; the counter adds the increment. Once a lane escapes its
//! increment is 0 for good, so its counter is frozen without a branch. The
//! loop ends when every increment is 0 or the budget is spent.

use crate::fractal::{escape_count, scalar_row, Real};

/// Lane counts a vector backend may use.
pub const LANE_COUNTS: [usize; 4] = [2, 4, 8, 16];

#[inline(always)]
pub fn escape_lanes<T: Real, const N: usize>(cr: &[T; N], ci: &[T; N], max_iter: u32) -> [u32; N] {
    let mut zr = [T::ZERO; N];
    let mut zi = [T::ZERO; N];
    let mut count = [0u32; N];
    let mut step = [1u32; N];
    for _ in 0..max_iter {
        let mut live = 0u32;
        for l in 0..N {
            let zr2 = zr[l] * zr[l];
            let zi2 = zi[l] * zi[l];
            step[l] &= (zr2 + zi2 <= T::FOUR) as u32;
            // Bounded by max_iter; wrapping keeps overflow checks out of the
            // lane loop so it still vectorizes in checked builds.
            count[l] = count[l].wrapping_add(step[l]);
            live |= step[l];
            let t = zr2 - zi2 + cr[l];
            zi[l] = T::TWO * zr[l] * zi[l] + ci[l];
            zr[l] = t;
        }
        if live == 0 {
            break;
        }
    }
    count
}

/// Fills a row in strips of `N` pixels; a ragged tail uses the scalar kernel.
pub(crate) fn vector_row<T: Real, const N: usize>(
    cres: &[T],
    ci: T,
    max_iter: u32,
    out: &mut [u32],
) {
    let full = cres.len() / N * N;
    let ci = [ci; N];
    for (cs, os) in cres[..full]
        .chunks_exact(N)
        .zip(out[..full].chunks_exact_mut(N))
    {
        let cr: &[T; N] = cs.try_into().expect("exact chunk");
        os.copy_from_slice(&escape_lanes(cr, &ci, max_iter));
    }
    scalar_row(&cres[full..], ci[0], max_iter, &mut out[full..]);
}

/// Fills one row of counts from its column coordinates.
pub(crate) type RowKernel<T> = fn(&[T], T, u32, &mut [u32]);

/// Strip kernel for a runtime lane count. `None` for unsupported counts.
pub(crate) fn row_kernel<T: Real>(lanes: usize) -> Option<RowKernel<T>> {
    Some(match lanes {
        1 => scalar_row::<T>,
        2 => vector_row::<T, 2>,
        4 => vector_row::<T, 4>,
        8 => vector_row::<T, 8>,
        16 => vector_row::<T, 16>,
        _ => return None,
    })
}

/// Runtime-width wrapper over [`escape_lanes`]; used by the virtual device.
pub(crate) fn escape_strip<T: Real>(cr: &[T], ci: &[T], max_iter: u32, out: &mut [u32]) {
    fn run<T: Real, const N: usize>(cr: &[T], ci: &[T], max_iter: u32, out: &mut [u32]) {
        let cr: &[T; N] = cr.try_into().unwrap();
        let ci: &[T; N] = ci.try_into().unwrap();
        out.copy_from_slice(&escape_lanes(cr, ci, max_iter));
    }
    match cr.len() {
        2 => run::<T, 2>(cr, ci, max_iter, out),
        4 => run::<T, 4>(cr, ci, max_iter, out),
        8 => run::<T, 8>(cr, ci, max_iter, out),
        16 => run::<T, 16>(cr, ci, max_iter, out),
        _ => {
            for ((o, &r), &i) in out.iter_mut().zip(cr).zip(ci) {
                *o = escape_count(r, i, max_iter);
            }
        }
    }
}
