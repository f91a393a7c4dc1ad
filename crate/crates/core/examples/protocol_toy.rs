//! End-to-end protocol run with the toy profile: 25 generated sets, training on
//! 22, a report on the 3 held out.
//!
//! ```text
//! cargo run --release --example protocol_toy -- [iterations]
//! ```

use dagoffload::harness::{run_paper_protocol, table_csv, Profile, ProtocolSettings, REPORT_RATES_MBPS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut settings = ProtocolSettings::for_profile(Profile::Toy, 1);
    if let Some(k) = std::env::args().nth(1) {
        settings.train.iterations = k.parse()?;
    }
    let out = std::env::temp_dir().join("dagoffload-example-protocol");
    let bundle = run_paper_protocol(1, &settings, &out)?;
    println!("manifest   {}", bundle.manifest.display());
    println!("checkpoint {}", bundle.checkpoint.display());
    println!("metrics    {}", bundle.metrics.display());
    println!("report     {}\n", bundle.report.display());
    print!("{}", table_csv(&bundle.rows, &REPORT_RATES_MBPS));
    Ok(())
}
