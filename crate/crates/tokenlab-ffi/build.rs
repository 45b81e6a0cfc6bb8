use std::env;
use std::fs;
use std::path::PathBuf;

fn main() {
    let dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").expect("cargo sets CARGO_MANIFEST_DIR"));
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let config = cbindgen::Config::from_file(dir.join("cbindgen.toml")).expect("cbindgen.toml is readable");
    let bindings = cbindgen::Builder::new()
        .with_crate(&dir)
        .with_config(config)
        .generate()
        .expect("header generation succeeds");
    let mut buf = Vec::new();
    bindings.write(&mut buf);
    let out = dir.join("include").join("tokenlab.h");
    // Rewrite only on change so the header does not trigger rebuilds.
    if fs::read(&out).ok().as_deref() != Some(buf.as_slice()) {
        fs::create_dir_all(out.parent().expect("path has a parent")).expect("include dir is writable");
        fs::write(&out, buf).expect("header is writable");
    }
}
