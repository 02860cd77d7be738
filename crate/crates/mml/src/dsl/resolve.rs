//! Import binding and function collection.
//!
//! `source("path") as alias` binds a namespace. Paths matching the bundled
//! layer and optimizer library resolve to native implementations; any other
//! path is read from disk relative to the importing script, parsed, and may
//! contain only further imports and function definitions. Import cycles are
//! rejected by path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::ast::{Param, Program, Stmt, StmtKind};
use super::builtins;
use super::parser;
use super::DslError;

#[derive(Debug, Clone, PartialEq)]
pub struct FunDef {
    pub name: String,
    pub params: Vec<Param>,
    pub returns: Vec<Param>,
    pub body: Vec<Stmt>,
    pub line: usize,
}

#[derive(Debug, Clone)]
pub enum Namespace {
    /// Key into the bundled library registry.
    Builtin(&'static str),
    User(BTreeMap<String, FunDef>),
}

#[derive(Debug, Clone, Default)]
pub struct ResolvedProgram {
    /// Top-level statements in source order, imports and defs included
    /// (both are inert at execution time).
    pub stmts: Vec<Stmt>,
    pub functions: BTreeMap<String, FunDef>,
    pub namespaces: BTreeMap<String, Namespace>,
}

/// Bind a parsed program. `base_dir` anchors user-script imports; scripts
/// resolved purely in memory pass `None` and may then import only the
/// bundled library.
pub fn resolve(program: &Program, base_dir: Option<&Path>) -> Result<ResolvedProgram, DslError> {
    let mut out = ResolvedProgram {
        stmts: program.stmts.clone(),
        ..Default::default()
    };
    let mut visiting = Vec::new();
    bind_into(program, base_dir, &mut out, &mut visiting, true)?;
    Ok(out)
}

fn fundef_of(stmt: &Stmt) -> Option<FunDef> {
    match &stmt.kind {
        StmtKind::FunDef {
            name,
            params,
            returns,
            body,
        } => Some(FunDef {
            name: name.clone(),
            params: params.clone(),
            returns: returns.clone(),
            body: body.clone(),
            line: stmt.line,
        }),
        _ => None,
    }
}

fn bind_into(
    program: &Program,
    base_dir: Option<&Path>,
    out: &mut ResolvedProgram,
    visiting: &mut Vec<PathBuf>,
    top_level: bool,
) -> Result<(), DslError> {
    for stmt in &program.stmts {
        match &stmt.kind {
            StmtKind::Import { path, alias } => {
                let ns = load_namespace(path, stmt.line, base_dir, visiting)?;
                match out.namespaces.get(alias) {
                    None => {
                        out.namespaces.insert(alias.clone(), ns);
                    }
                    Some(existing) => {
                        // Re-importing the same library under the same alias
                        // is harmless; two different targets are not.
                        let same = matches!(
                            (existing, &ns),
                            (Namespace::Builtin(a), Namespace::Builtin(b)) if a == b
                        );
                        if !same {
                            return Err(DslError::DuplicateNamespace {
                                alias: alias.clone(),
                            });
                        }
                    }
                }
            }
            StmtKind::FunDef { name, .. } => {
                if out.functions.contains_key(name) {
                    return Err(DslError::DuplicateFunction { name: name.clone() });
                }
                out.functions.insert(name.clone(), fundef_of(stmt).unwrap());
            }
            _ if top_level => {}
            _ => return Err(DslError::ImportedStatement { line: stmt.line }),
        }
    }
    Ok(())
}

fn load_namespace(
    path: &str,
    line: usize,
    base_dir: Option<&Path>,
    visiting: &mut Vec<PathBuf>,
) -> Result<Namespace, DslError> {
    if let Some(key) = builtins::library_key(path) {
        return Ok(Namespace::Builtin(key));
    }
    let Some(dir) = base_dir else {
        return Err(DslError::Import {
            path: path.to_string(),
            msg: format!("line {line}: not a bundled library, and no script directory to search"),
        });
    };
    let full = dir.join(path);
    let canonical = full
        .canonicalize()
        .map_err(|e| DslError::Import {
            path: full.display().to_string(),
            msg: e.to_string(),
        })?;
    if visiting.contains(&canonical) {
        return Err(DslError::ImportCycle {
            path: canonical.display().to_string(),
        });
    }
    let text = std::fs::read_to_string(&canonical).map_err(|e| DslError::Import {
        path: canonical.display().to_string(),
        msg: e.to_string(),
    })?;
    let program = parser::parse(&text)?;
    visiting.push(canonical.clone());
    let mut sub = ResolvedProgram::default();
    let sub_dir = canonical.parent().map(Path::to_path_buf);
    bind_into(&program, sub_dir.as_deref(), &mut sub, visiting, false)?;
    visiting.pop();
    // Functions from the file live under the importing alias. Namespaces the
    // file imported for its own use are not re-exported; its functions can
    // only rely on the bundled library, which is globally addressable.
    for (alias, ns) in sub.namespaces {
        if matches!(ns, Namespace::User(_)) {
            return Err(DslError::Import {
                path: canonical.display().to_string(),
                msg: format!("nested user-script imports are not supported (alias {alias:?})"),
            });
        }
    }
    Ok(Namespace::User(sub.functions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parser::parse;

    #[test]
    fn library_imports_bind_without_a_filesystem() {
        let prog = parse("source(\"nn/layers/affine.dml\") as affine").unwrap();
        let r = resolve(&prog, None).unwrap();
        assert!(matches!(
            r.namespaces.get("affine"),
            Some(Namespace::Builtin("affine"))
        ));
    }

    #[test]
    fn unknown_path_without_base_dir_fails() {
        let prog = parse("source(\"helpers.dml\") as h").unwrap();
        match resolve(&prog, None) {
            Err(DslError::Import { path, .. }) => assert_eq!(path, "helpers.dml"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn top_level_functions_are_collected() {
        let prog = parse("f = function(x) return (y) {\n  y = x\n}\ng = function() {\n}").unwrap();
        let r = resolve(&prog, None).unwrap();
        assert_eq!(r.functions.len(), 2);
        assert_eq!(r.functions["f"].returns.len(), 1);
    }

    #[test]
    fn duplicate_function_rejected() {
        let prog = parse("f = function() {\n}\nf = function() {\n}").unwrap();
        assert!(matches!(
            resolve(&prog, None),
            Err(DslError::DuplicateFunction { .. })
        ));
    }

    #[test]
    fn user_file_import_and_cycle_detection() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("helpers.dml"),
            "double_it = function(matrix[double] X) return (matrix[double] Y) {\n  Y = X * 2\n}\n",
        )
        .unwrap();
        let prog = parse("source(\"helpers.dml\") as h").unwrap();
        let r = resolve(&prog, Some(dir.path())).unwrap();
        match r.namespaces.get("h") {
            Some(Namespace::User(fns)) => assert!(fns.contains_key("double_it")),
            other => panic!("unexpected {other:?}"),
        }

        std::fs::write(
            dir.path().join("a.dml"),
            "source(\"b.dml\") as b\nfa = function() {\n}\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("b.dml"),
            "source(\"a.dml\") as a\nfb = function() {\n}\n",
        )
        .unwrap();
        let prog = parse("source(\"a.dml\") as a").unwrap();
        match resolve(&prog, Some(dir.path())) {
            Err(DslError::Import { .. }) | Err(DslError::ImportCycle { .. }) => {}
            other => panic!("expected an import failure, got {other:?}"),
        }
    }

    #[test]
    fn imported_files_may_not_run_statements() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("bad.dml"), "x = 5\n").unwrap();
        let prog = parse("source(\"bad.dml\") as bad").unwrap();
        assert!(matches!(
            resolve(&prog, Some(dir.path())),
            Err(DslError::ImportedStatement { .. })
        ));
    }
}
