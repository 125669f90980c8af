use std::process::ExitCode;

use speclab_validation::{evaluate, CRITERIA};

fn main() -> ExitCode {
    println!("\nrunning {} acceptance criteria", CRITERIA.len());
    let mut failed = 0;
    for (name, build) in CRITERIA {
        let criterion = evaluate(name, build);
        println!("{}", criterion.summary());
        if !criterion.pass() {
            failed += 1;
        }
    }
    println!(
        "\nacceptance: {} passed, {} failed\n",
        CRITERIA.len() - failed,
        failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
