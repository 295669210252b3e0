use std::collections::{BTreeMap, BTreeSet};

use super::model::{IRFunction, IRProgram, LinkCollision};

fn rename_refs(f: &mut IRFunction, renames: &BTreeMap<String, String>) {
    for i in &mut f.instructions {
        if let Some(new) = i.callee.as_ref().and_then(|c| renames.get(c)) {
            i.callee = Some(new.clone());
        }
        for r in &mut i.symbol_refs {
            if let Some(new) = renames.get(r) {
                *r = new.clone();
            }
        }
        for op in &mut i.operands {
            if let Some(new) = op.strip_prefix('@').and_then(|n| renames.get(n)) {
                *op = format!("@{new}");
            }
        }
    }
}

/// Merges modules into one program.
///
/// A definition replaces a declaration of the same name. When two modules
/// define the same name, the later definition is renamed `name.N` (smallest
/// free `N`), references inside its own module follow the rename and the
/// event is recorded in `collisions`.
pub fn link_modules(modules: Vec<IRProgram>) -> IRProgram {
    let mut out = IRProgram::default();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for mut module in modules {
        let module_name = module
            .module_names
            .first()
            .cloned()
            .unwrap_or_else(|| format!("module{}", out.module_names.len()));

        let mut taken: BTreeSet<String> = index.keys().cloned().collect();
        taken.extend(module.functions.iter().map(|f| f.name.clone()));
        let mut renames = BTreeMap::new();
        for f in module.functions.iter().filter(|f| f.is_definition) {
            let clash = index
                .get(&f.name)
                .is_some_and(|&i| out.functions[i].is_definition);
            if !clash {
                continue;
            }
            let renamed = (1..)
                .map(|n| format!("{}.{n}", f.name))
                .find(|c| !taken.contains(c))
                .unwrap();
            taken.insert(renamed.clone());
            out.collisions.push(LinkCollision {
                name: f.name.clone(),
                renamed_to: renamed.clone(),
                kept_module: out.link_table.get(&f.name).cloned().unwrap_or_default(),
                renamed_module: module_name.clone(),
            });
            renames.insert(f.name.clone(), renamed);
        }
        for f in &mut module.functions {
            if f.is_definition {
                if let Some(new) = renames.get(&f.name) {
                    f.name = new.clone();
                }
            }
            rename_refs(f, &renames);
        }
        let global_refs: Vec<String> = module
            .global_refs
            .into_iter()
            .map(|r| renames.get(&r).cloned().unwrap_or(r))
            .collect();
        out.global_refs.extend(global_refs);
        out.globals.extend(module.globals);

        for f in module.functions {
            match index.get(&f.name) {
                None => {
                    index.insert(f.name.clone(), out.functions.len());
                    out.link_table.insert(f.name.clone(), module_name.clone());
                    out.functions.push(f);
                }
                Some(&i) => {
                    if f.is_definition && !out.functions[i].is_definition {
                        out.link_table.insert(f.name.clone(), module_name.clone());
                        out.functions[i] = f;
                    }
                }
            }
        }
        out.module_names.push(module_name);
    }
    out.recompute_address_taken();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::load_ir_module_named;

    #[test]
    fn definition_beats_declaration() {
        let a = load_ir_module_named("a.ll", "declare void @g()\ndefine void @f() {\n  call void @g()\n  ret void\n}\n").unwrap();
        let b = load_ir_module_named("b.ll", "define void @g() {\n  ret void\n}\n").unwrap();
        let p = link_modules(vec![a, b]);
        assert_eq!(p.functions.len(), 2);
        assert!(p.function("g").unwrap().is_definition);
        assert_eq!(p.link_table["g"], "b.ll");
        assert!(p.collisions.is_empty());
    }

    #[test]
    fn duplicate_definitions_are_renamed() {
        let src = "define internal void @h() {\n  ret void\n}\ndefine void @k() {\n  call void @h()\n  ret void\n}\n";
        let a = load_ir_module_named("a.ll", "define internal void @h() {\n  ret void\n}\n").unwrap();
        let b = load_ir_module_named("b.ll", src).unwrap();
        let p = link_modules(vec![a, b]);
        assert!(p.function("h.1").is_some());
        let k = p.function("k").unwrap();
        assert_eq!(k.instructions[0].callee.as_deref(), Some("h.1"));
        assert_eq!(p.collisions.len(), 1);
        assert_eq!(p.collisions[0].renamed_module, "b.ll");
        assert_eq!(p.module_names, vec!["a.ll", "b.ll"]);
    }
}
