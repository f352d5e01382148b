use std::io;

use gridalloc_cli::{execute, Streams};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (mut stdout, mut stderr) = (io::stdout().lock(), io::stderr().lock());
    let code = execute(&args, &mut Streams { stdout: &mut stdout, stderr: &mut stderr });
    std::process::exit(code);
}
