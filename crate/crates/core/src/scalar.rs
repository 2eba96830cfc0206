//! Floating-point element types and the dense matrix-product kernel.
//!
//! Everything numeric in the crate is generic over [`Scalar`]: the
//! optimization loop runs in `f32`, while gradient checks run the same code
//! in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use num_traits::Float;
use rayon::prelude::*;

/// On-disk element type tag used by the `.dtpw` weight format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

/// Row and column strides of a matrix operand, in elements.
#[derive(Debug, Clone, Copy)]
pub struct Strides {
    pub row: isize,
    pub col: isize,
}

impl Strides {
    /// Row-major storage of a matrix with `cols` columns.
    pub fn row_major(cols: usize) -> Self {
        Strides { row: cols as isize, col: 1 }
    }

    /// The same storage read as its transpose.
    pub fn transposed(self) -> Self {
        Strides { row: self.col, col: self.row }
    }
}

pub trait Scalar:
    Float + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const DTYPE: DType;

    fn of_f64(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c = alpha * a·b + beta * c` for an `m×k` by `k×n` product.
    ///
    /// # Safety
    /// Strides must address memory inside the three slices' allocations.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        sa: Strides,
        b: *const Self,
        sb: Strides,
        beta: Self,
        c: *mut Self,
        sc: Strides,
    );

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn of_f64(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        sa: Strides,
        b: *const Self,
        sb: Strides,
        beta: Self,
        c: *mut Self,
        sc: Strides,
    ) {
        matrixmultiply::sgemm(
            m, k, n, alpha, a, sa.row, sa.col, b, sb.row, sb.col, beta, c, sc.row, sc.col,
        )
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn of_f64(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        sa: Strides,
        b: *const Self,
        sb: Strides,
        beta: Self,
        c: *mut Self,
        sc: Strides,
    ) {
        matrixmultiply::dgemm(
            m, k, n, alpha, a, sa.row, sa.col, b, sb.row, sb.col, beta, c, sc.row, sc.col,
        )
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

static KERNEL_THREADS: AtomicUsize = AtomicUsize::new(0);
static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

/// Caps the number of threads the matrix kernels may use.
///
/// Work is only ever split along output columns, so every output element is
/// accumulated in the same order whatever the thread count.
pub fn set_kernel_threads(threads: usize) {
    KERNEL_THREADS.store(threads.max(1), Ordering::Relaxed);
}

/// Reads `DTP_THREADS` from the environment, defaulting to one thread.
pub fn init_kernel_threads_from_env() {
    let threads = std::env::var("DTP_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(1);
    set_kernel_threads(threads);
}

pub fn kernel_threads() -> usize {
    KERNEL_THREADS.load(Ordering::Relaxed).max(1)
}

fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        let n = std::thread::available_parallelism().map_or(1, |n| n.get()).max(kernel_threads());
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .thread_name(|i| format!("dtp-kernel-{i}"))
            .build()
            .expect("kernel thread pool")
    })
}

// Columns below this count are not worth splitting.
const MIN_COLS_PER_TASK: usize = 64;

struct SendPtr<T>(*mut T);
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

/// Matrix product over slices with bounds checked against the strides.
///
/// When `accumulate` is set the product is added to `c`, otherwise `c` is
/// overwritten.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    c: &mut [T],
    sc: Strides,
    accumulate: bool,
) {
    fn span(rows: usize, cols: usize, s: Strides) -> usize {
        if rows == 0 || cols == 0 {
            return 0;
        }
        ((rows - 1) as isize * s.row + (cols - 1) as isize * s.col) as usize + 1
    }
    assert!(span(m, k, sa) <= a.len(), "gemm: lhs out of bounds");
    assert!(span(k, n, sb) <= b.len(), "gemm: rhs out of bounds");
    assert!(span(m, n, sc) <= c.len(), "gemm: output out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                for j in 0..n {
                    c[(i as isize * sc.row + j as isize * sc.col) as usize] = T::zero();
                }
            }
        }
        return;
    }

    let threads = kernel_threads();
    let tasks = threads.min(n / MIN_COLS_PER_TASK).max(1);
    if tasks == 1 {
        unsafe {
            T::gemm_raw(m, k, n, T::one(), a.as_ptr(), sa, b.as_ptr(), sb, beta, c.as_mut_ptr(), sc);
        }
        return;
    }

    let chunk = n.div_ceil(tasks);
    let a_ptr = SendPtr(a.as_ptr() as *mut T);
    let b_ptr = SendPtr(b.as_ptr() as *mut T);
    let c_ptr = SendPtr(c.as_mut_ptr());
    pool().install(|| {
        (0..tasks).into_par_iter().for_each(|t| {
            let j0 = t * chunk;
            let cols = chunk.min(n.saturating_sub(j0));
            if cols == 0 {
                return;
            }
            let (a_ptr, b_ptr, c_ptr) = (&a_ptr, &b_ptr, &c_ptr);
            // Disjoint column ranges of `c`; `a` and `b` are only read.
            unsafe {
                T::gemm_raw(
                    m,
                    k,
                    cols,
                    T::one(),
                    a_ptr.0 as *const T,
                    sa,
                    (b_ptr.0 as *const T).offset(j0 as isize * sb.col),
                    sb,
                    beta,
                    c_ptr.0.offset(j0 as isize * sc.col),
                    sc,
                );
            }
        });
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_triple_loop() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, &a, Strides::row_major(k), &b, Strides::row_major(n), &mut c, Strides::row_major(n), false);
        for (x, y) in c.iter().zip(naive(m, k, n, &a, &b)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_operand() {
        // a is stored as k×m and read transposed.
        let (m, k, n) = (3, 4, 2);
        let at: Vec<f64> = (0..k * m).map(|i| i as f64).collect();
        let mut a = vec![0.0; m * k];
        for p in 0..k {
            for i in 0..m {
                a[i * k + p] = at[p * m + i];
            }
        }
        let b: Vec<f64> = (0..k * n).map(|i| 1.0 + i as f64).collect();
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, &at, Strides::row_major(m).transposed(), &b, Strides::row_major(n), &mut c, Strides::row_major(n), false);
        assert_eq!(c, naive(m, k, n, &a, &b));
    }

    #[test]
    fn split_columns_are_bit_identical() {
        let (m, k, n) = (17, 300, 700);
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 7919) % 1000) as f32 / 997.0 - 0.5).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 104729) % 1000) as f32 / 991.0 - 0.5).collect();
        let mut single = vec![0.0f32; m * n];
        set_kernel_threads(1);
        gemm(m, k, n, &a, Strides::row_major(k), &b, Strides::row_major(n), &mut single, Strides::row_major(n), false);
        set_kernel_threads(4);
        let mut multi = vec![0.0f32; m * n];
        gemm(m, k, n, &a, Strides::row_major(k), &b, Strides::row_major(n), &mut multi, Strides::row_major(n), false);
        set_kernel_threads(1);
        assert_eq!(
            single.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            multi.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }
}
