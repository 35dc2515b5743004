fn main() {
    std::process::exit(czx_lab_cli_stub());
}

fn czx_lab_cli_stub() -> i32 {
    eprintln!("cli not wired yet");
    2
}
