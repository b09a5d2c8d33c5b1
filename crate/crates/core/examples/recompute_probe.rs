use mcls::problems::problem1_reference_recompute;
use mcls::rng::rng_for_run;

fn main() {
    let mut rng = rng_for_run(2024, 0);
    let (x, cov) = problem1_reference_recompute(100_000, &mut rng);
    println!("recomputed x* = {:?}", x.as_slice());
    println!("cov of mean   = {:?}", cov.as_slice());
}
