use blesskit::linalg::sym_eigh;
use ndarray::Array2;
use std::time::Instant;

#[test]
fn probe_dsyevd_speed() {
    for &n in &[2000usize, 4000, 8000] {
        let mut a = Array2::<f64>::zeros((n, n));
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for i in 0..n {
            for j in 0..=i {
                let v = next() - 0.5;
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
            a[[i, i]] += n as f64;
        }
        let t0 = Instant::now();
        let (vals, _vecs) = sym_eigh(a.view()).unwrap();
        let t = t0.elapsed().as_secs_f64();
        eprintln!("n={n}: dsyevd={t:.2}s minval={:.2}", vals[0]);
    }
}
