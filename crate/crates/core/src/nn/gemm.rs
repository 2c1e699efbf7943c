use rayon::prelude::*;

use super::Real;

/// Rows of `C` handed to one task. Fixed so results never depend on the
/// thread count.
const ROW_BLOCK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// Row-major `C[m×n] = A·B + beta·C` where `A` is `m×k` (or its transpose
/// stored `k×m`) and `B` is `k×n` (or stored `n×k`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    op_a: Op,
    b: &[T],
    op_b: Op,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match op_a {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    let run = |row0: usize, c_block: &mut [T]| {
        let rows = c_block.len() / n;
        // SAFETY: the offsets stay inside `a` for rows `row0..row0+rows`,
        // `b` is read whole and `c_block` is an exclusive row range.
        unsafe {
            T::gemm_raw(
                rows,
                k,
                n,
                T::one(),
                a.as_ptr().offset(row0 as isize * rsa),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c_block.as_mut_ptr(),
                n as isize,
                1,
            )
        }
    };
    if m >= 2 * ROW_BLOCK && m * n * k >= 1 << 18 {
        c.par_chunks_mut(ROW_BLOCK * n)
            .enumerate()
            .for_each(|(i, blk)| run(i * ROW_BLOCK, blk));
    } else {
        run(0, c);
    }
}
