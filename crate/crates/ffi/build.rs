use std::path::PathBuf;

// Regenerates include/reled.h from src/lib.rs. The header is committed so C
// consumers can build without the Rust toolchain; this keeps it in sync
// whenever the crate itself is rebuilt.
fn main() {
    let crate_dir = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());

    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        include_guard: Some("RELED_H".into()),
        cpp_compat: true,
        documentation: true,
        header: Some(
            "/* C interface to the reled road-network simulator and trajectory analytics.\n\
             * Generated by cbindgen from crates/ffi; do not edit by hand. */"
                .into(),
        ),
        enumeration: cbindgen::EnumConfig {
            prefix_with_name: true,
            rename_variants: cbindgen::RenameRule::ScreamingSnakeCase,
            ..Default::default()
        },
        ..Default::default()
    };

    cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("cbindgen failed to generate include/reled.h")
        .write_to_file(crate_dir.join("include").join("reled.h"));

    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=build.rs");
}
