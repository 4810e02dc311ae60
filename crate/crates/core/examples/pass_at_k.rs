//! Prints the unbiased Pass@k estimate next to the empirical any-pass rate
//! of the first `k` samples, for every pass count `c` out of `n`. The
//! empirical columns put the passing samples last, so they show how far the
//! two can diverge.
//!
//! ```text
//! cargo run --example pass_at_k [N]
//! ```

use repogen::eval::{pass_at_k_empirical, pass_at_k_estimator};

fn main() -> anyhow::Result<()> {
    let n: u32 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let ks: Vec<u32> = [1, 3, 5].into_iter().filter(|&k| k <= n).collect();

    print!("{:>3}", "c");
    for k in &ks {
        print!("  {:>9}", format!("est@{k}"));
    }
    for k in &ks {
        print!("  {:>9}", format!("emp@{k}"));
    }
    println!();
    for c in 0..=n {
        let samples: Vec<bool> = (0..n).map(|i| i >= n - c).collect();
        print!("{c:>3}");
        for &k in &ks {
            print!("  {:>9.4}", pass_at_k_estimator(n, c, k)?.value);
        }
        for &k in &ks {
            print!("  {:>9.4}", pass_at_k_empirical(&samples[..k as usize], k)?.value);
        }
        println!();
    }
    Ok(())
}
