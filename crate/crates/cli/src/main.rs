use clap::Parser;

fn main() {
    let cli = fer_occlusion_cli::Cli::parse();
    std::process::exit(fer_occlusion_cli::run(cli));
}
