//! MRG32k3a combined multiple-recursive generator with 2^127 stream
//! jump-ahead, after L'Ecuyer (1999) and the RngStreams package.
//!
//! Each future that requests reproducible randomness gets its own stream,
//! derived from the session seed and the future's creation ordinal, so
//! results do not depend on which backend runs what where.

const M1: i64 = 4_294_967_087; // 2^32 - 209
const M2: i64 = 4_294_944_443; // 2^32 - 22853
const A12: i64 = 1_403_580;
const A13N: i64 = 810_728;
const A21: i64 = 527_612;
const A23N: i64 = 1_370_589;
#[allow(clippy::excessive_precision)] // published constant, 1 / (M1 + 1)
const NORM: f64 = 2.328306549295727688e-10;

/// Six-word generator state: two length-3 recurrence histories, each holding
/// (x_{n-3}, x_{n-2}, x_{n-1}).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub x1: [u64; 3],
    pub x2: [u64; 3],
}

impl RngState {
    /// The all-ones state; handy as a fixed reference point.
    pub fn ones() -> Self {
        RngState {
            x1: [1, 1, 1],
            x2: [1, 1, 1],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x1.iter().all(|&w| w < M1 as u64)
            && self.x2.iter().all(|&w| w < M2 as u64)
            && self.x1.iter().any(|&w| w != 0)
            && self.x2.iter().any(|&w| w != 0)
    }

    pub fn from_words(words: [u64; 6]) -> Result<Self, String> {
        let state = RngState {
            x1: [words[0], words[1], words[2]],
            x2: [words[3], words[4], words[5]],
        };
        if state.is_valid() {
            Ok(state)
        } else {
            Err(format!("invalid MRG32k3a state {words:?}"))
        }
    }

    pub fn words(&self) -> [u64; 6] {
        [
            self.x1[0], self.x1[1], self.x1[2], self.x2[0], self.x2[1], self.x2[2],
        ]
    }
}

/// A state plus a used-flag, so the framework can cheaply detect that a task
/// drew random numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RngCursor {
    pub state: RngState,
    pub used: bool,
}

impl RngCursor {
    pub fn new(state: RngState) -> Self {
        RngCursor {
            state,
            used: false,
        }
    }
}

/// Advance one step and return a uniform deviate strictly inside (0, 1).
pub fn next_uniform(cursor: &mut RngCursor) -> f64 {
    let s1 = &mut cursor.state.x1;
    let p1 = (A12 * s1[1] as i64 - A13N * s1[0] as i64).rem_euclid(M1);
    *s1 = [s1[1], s1[2], p1 as u64];

    let s2 = &mut cursor.state.x2;
    let p2 = (A21 * s2[2] as i64 - A23N * s2[0] as i64).rem_euclid(M2);
    *s2 = [s2[1], s2[2], p2 as u64];

    cursor.used = true;
    let diff = (p1 - p2).rem_euclid(M1);
    if diff > 0 {
        diff as f64 * NORM
    } else {
        M1 as f64 * NORM
    }
}

// --- jump-ahead by modular matrix exponentiation ---------------------------

type Mat = [[u64; 3]; 3];

fn mat_mul(a: &Mat, b: &Mat, m: u64) -> Mat {
    let mut out = [[0u64; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let mut acc: u128 = 0;
            for k in 0..3 {
                acc += a[i][k] as u128 * b[k][j] as u128;
            }
            *cell = (acc % m as u128) as u64;
        }
    }
    out
}

fn mat_vec(a: &Mat, v: &[u64; 3], m: u64) -> [u64; 3] {
    let mut out = [0u64; 3];
    for (i, row) in a.iter().enumerate() {
        let mut acc: u128 = 0;
        for k in 0..3 {
            acc += row[k] as u128 * v[k] as u128;
        }
        out[i] = (acc % m as u128) as u64;
    }
    out
}

fn mat_pow(base: &Mat, mut exp: u128, m: u64) -> Mat {
    let mut result: Mat = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
    let mut base = *base;
    while exp > 0 {
        if exp & 1 == 1 {
            result = mat_mul(&result, &base, m);
        }
        base = mat_mul(&base, &base, m);
        exp >>= 1;
    }
    result
}

/// Companion matrix of the first recurrence
/// x1_n = (1403580*x1_{n-2} - 810728*x1_{n-3}) mod M1.
fn companion1() -> Mat {
    [
        [0, 1, 0],
        [0, 0, 1],
        [(M1 - A13N) as u64, A12 as u64, 0],
    ]
}

/// Companion matrix of the second recurrence
/// x2_n = (527612*x2_{n-1} - 1370589*x2_{n-3}) mod M2.
fn companion2() -> Mat {
    [
        [0, 1, 0],
        [0, 0, 1],
        [(M2 - A23N) as u64, 0, A21 as u64],
    ]
}

/// Advance a state by 2^pow2 steps via matrix exponentiation.
pub fn jump_pow2(state: &RngState, pow2: u32) -> RngState {
    let e: u128 = 1u128 << pow2.min(127);
    let j1 = mat_pow(&companion1(), e, M1 as u64);
    let j2 = mat_pow(&companion2(), e, M2 as u64);
    RngState {
        x1: mat_vec(&j1, &state.x1, M1 as u64),
        x2: mat_vec(&j2, &state.x2, M2 as u64),
    }
}

/// Cached 2^127 jump matrices, computed once.
fn jump127() -> &'static (Mat, Mat) {
    use std::sync::OnceLock;
    static JUMP: OnceLock<(Mat, Mat)> = OnceLock::new();
    JUMP.get_or_init(|| {
        (
            mat_pow(&companion1(), 1u128 << 127, M1 as u64),
            mat_pow(&companion2(), 1u128 << 127, M2 as u64),
        )
    })
}

/// The next stream: this state advanced by 2^127 steps. The input is not
/// modified.
pub fn next_stream(state: &RngState) -> RngState {
    let (j1, j2) = jump127();
    RngState {
        x1: mat_vec(j1, &state.x1, M1 as u64),
        x2: mat_vec(j2, &state.x2, M2 as u64),
    }
}

/// Advance a state by single steps (test and validation aid; the output
/// value is discarded).
pub fn step_n(state: &RngState, n: u64) -> RngState {
    let mut cursor = RngCursor::new(*state);
    for _ in 0..n {
        next_uniform(&mut cursor);
    }
    cursor.state
}

// --- seeding ----------------------------------------------------------------

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derive the session base state from a 64-bit seed by iterating a mix
/// function, rejecting all-zero triples.
pub fn base_state(seed: u64) -> RngState {
    let mut s = seed;
    let fill = |s: &mut u64, m: u64| -> [u64; 3] {
        loop {
            let triple = [
                splitmix64(s) % m,
                splitmix64(s) % m,
                splitmix64(s) % m,
            ];
            if triple.iter().any(|&w| w != 0) {
                return triple;
            }
        }
    };
    RngState {
        x1: fill(&mut s, M1 as u64),
        x2: fill(&mut s, M2 as u64),
    }
}

/// The stream assigned to a future: the base state jumped `ordinal + 1`
/// times. A pure function of (seed, ordinal).
pub fn stream_for(session_seed: u64, ordinal: u64) -> RngState {
    let mut state = base_state(session_seed);
    for _ in 0..=ordinal {
        state = next_stream(&state);
    }
    state
}

/// A scratch state for unseeded draws, derived from ambient entropy. Draws
/// from it are flagged as potential misuse, never forbidden.
pub fn scratch_state() -> RngState {
    use std::time::{SystemTime, UNIX_EPOCH};
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0x5EED);
    let mut s = nanos ^ ((std::process::id() as u64) << 32) ^ 0xA5A5_5A5A_1234_FFFF;
    let mut state = base_state(splitmix64(&mut s));
    state = next_stream(&state);
    state
}

// --- normal deviates ---------------------------------------------------------

/// Inverse normal CDF via Acklam's rational approximation (relative error
/// below ~1.2e-9 over (0,1)).
#[allow(clippy::excessive_precision)] // published coefficient tables
pub fn probit(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Inverse-CDF transform of successive uniforms.
pub fn normals_from_uniforms(cursor: &mut RngCursor, n: usize) -> Vec<f64> {
    (0..n).map(|_| probit(next_uniform(cursor))).collect()
}
