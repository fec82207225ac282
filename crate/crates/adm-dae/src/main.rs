use std::process;

fn main() {
    process::exit(adm_dae::harness::cli_main(std::env::args()));
}
