//! Protocol-conformant evaluator that answers with the built-in surrogate.
//!
//! Reads one JSON request per line on stdin and writes one response per line
//! on stdout. Malformed requests get `{"id": null, "error": "..."}`.

use std::io::{self, BufRead, Write};

use clap::Parser;
use serde_json::json;

use imc_nas::eval::{surrogate_accuracy, Request, SurrogateParams};
use imc_nas::ir::{expand, HeadSpec};
use imc_nas::space::InputShape;

#[derive(Parser)]
#[command(name = "imc-nas-stub-evaluator")]
struct Args {
    #[arg(long = "input-shape", default_value = "3x32x32")]
    input_shape: InputShape,
    #[arg(long = "num-classes", default_value_t = 10)]
    num_classes: u64,
    #[arg(long = "hidden-units", default_value_t = 256)]
    hidden_units: u64,
    #[arg(long, default_value_t = 0)]
    salt: u64,
}

fn answer(line: &str, args: &Args) -> serde_json::Value {
    let request: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return json!({"id": null, "error": format!("malformed request: {e}")}),
    };
    let head = HeadSpec {
        hidden_units: args.hidden_units,
        num_classes: args.num_classes,
        ..HeadSpec::default()
    };
    match expand(&request.genome, args.input_shape, &head) {
        Ok(ir) => {
            let params = SurrogateParams {
                salt: args.salt,
                ..SurrogateParams::default()
            };
            let result = surrogate_accuracy(&ir, &params);
            json!({"id": request.id, "accuracy": result.accuracy, "meta": {"params": ir.total_params}})
        }
        Err(e) => json!({"id": request.id, "error": e.to_string()}),
    }
}

fn main() -> io::Result<()> {
    let args = Args::parse();
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(stdout, "{}", answer(&line, &args))?;
        stdout.flush()?;
    }
    Ok(())
}
