use super::{ArchDescriptor, Family, StageKind, UnitRef, UnitRole};

/// One step of a network's forward pass. Parameter-bearing nodes carry the
/// path prefix of their tensors (`{path}/weight`, `{path}/gamma`, ...).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Node {
    Flatten,
    Conv2d {
        path: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        path: String,
        ch: usize,
    },
    Relu,
    MaxPool2x2,
    GlobalAvgPool,
    Dense {
        path: String,
        inp: usize,
        out: usize,
    },
    /// `relu(main(x) + shortcut(x))`; an empty shortcut is the identity.
    Residual {
        main: Vec<Node>,
        shortcut: Vec<Node>,
    },
}

fn conv(path: String, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Node {
    Node::Conv2d {
        path,
        in_ch,
        out_ch,
        kernel,
        stride,
        pad: kernel / 2,
    }
}

pub(super) fn build(arch: &ArchDescriptor) -> Vec<Node> {
    let mut nodes = Vec::new();
    let input = UnitRef {
        stage: None,
        unit: 0,
        role: UnitRole::Input,
    };
    let output = UnitRef {
        stage: None,
        unit: 0,
        role: UnitRole::Output,
    };
    let in_prefix = arch.unit_prefix(&input);
    let out_prefix = arch.unit_prefix(&output);

    if arch.family == Family::Mlp {
        nodes.push(Node::Flatten);
        nodes.push(Node::Dense {
            path: in_prefix,
            inp: arch.input_features(),
            out: arch.stem_width,
        });
        nodes.push(Node::Relu);
    } else {
        nodes.push(conv(format!("{in_prefix}/conv"), arch.input_shape[0], arch.stem_width, 3, 1));
        nodes.push(Node::BatchNorm {
            path: format!("{in_prefix}/bn"),
            ch: arch.stem_width,
        });
        nodes.push(Node::Relu);
    }

    let mut width = arch.stem_width;
    let mut flattened = arch.family == Family::Mlp;
    for (s, stage) in arch.stages.iter().enumerate() {
        if stage.kind == StageKind::Conv && s > 0 {
            nodes.push(Node::MaxPool2x2);
        }
        if stage.kind == StageKind::Dense && !flattened {
            nodes.push(Node::GlobalAvgPool);
            flattened = true;
        }
        for j in 0..stage.units {
            let u = UnitRef {
                stage: Some(s),
                unit: j,
                role: arch.unit_role(s, j),
            };
            let prefix = arch.unit_prefix(&u);
            let in_w = if j == 0 { width } else { stage.width };
            match stage.kind {
                StageKind::Residual => {
                    let stride = if j == 0 && s > 0 { 2 } else { 1 };
                    let main = vec![
                        conv(format!("{prefix}/conv1"), in_w, stage.width, 3, stride),
                        Node::BatchNorm {
                            path: format!("{prefix}/bn1"),
                            ch: stage.width,
                        },
                        Node::Relu,
                        conv(format!("{prefix}/conv2"), stage.width, stage.width, 3, 1),
                        Node::BatchNorm {
                            path: format!("{prefix}/bn2"),
                            ch: stage.width,
                        },
                    ];
                    let shortcut = if arch.has_projection(s, j) {
                        vec![
                            conv(format!("{prefix}/shortcut"), in_w, stage.width, 1, stride),
                            Node::BatchNorm {
                                path: format!("{prefix}/bnshortcut"),
                                ch: stage.width,
                            },
                        ]
                    } else {
                        Vec::new()
                    };
                    nodes.push(Node::Residual { main, shortcut });
                }
                StageKind::Conv => {
                    nodes.push(conv(format!("{prefix}/conv"), in_w, stage.width, 3, 1));
                    nodes.push(Node::BatchNorm {
                        path: format!("{prefix}/bn"),
                        ch: stage.width,
                    });
                    nodes.push(Node::Relu);
                }
                StageKind::Dense => {
                    let path = if arch.family == Family::Mlp {
                        prefix
                    } else {
                        format!("{prefix}/fc")
                    };
                    nodes.push(Node::Dense {
                        path,
                        inp: in_w,
                        out: stage.width,
                    });
                    nodes.push(Node::Relu);
                }
            }
        }
        width = stage.width;
    }
    if !flattened {
        nodes.push(Node::GlobalAvgPool);
    }
    let path = if arch.family == Family::Mlp {
        out_prefix
    } else {
        format!("{out_prefix}/fc")
    };
    nodes.push(Node::Dense {
        path,
        inp: width,
        out: arch.num_classes,
    });
    nodes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ParamKind;

    fn collect_paths(nodes: &[Node], out: &mut Vec<String>) {
        for n in nodes {
            match n {
                Node::Conv2d { path, .. } => out.push(format!("{path}/weight")),
                Node::Dense { path, .. } => {
                    out.push(format!("{path}/weight"));
                    out.push(format!("{path}/bias"));
                }
                Node::BatchNorm { path, .. } => {
                    for s in ["gamma", "beta", "rmean", "rvar"] {
                        out.push(format!("{path}/{s}"));
                    }
                }
                Node::Residual { main, shortcut } => {
                    collect_paths(main, out);
                    collect_paths(shortcut, out);
                }
                _ => {}
            }
        }
    }

    #[test]
    fn plan_touches_exactly_the_param_paths() {
        for arch in [
            ArchDescriptor::resnet_cifar(20).unwrap(),
            ArchDescriptor::vgg_cifar(16).unwrap(),
            ArchDescriptor::vgg_custom(&[2, 2, 2, 2, 2], &crate::arch::VGG_WIDTHS, 5).unwrap(),
            ArchDescriptor::mlp(3).unwrap(),
        ] {
            let mut got = Vec::new();
            collect_paths(&arch.plan(), &mut got);
            let want: Vec<String> = arch.param_specs().into_iter().map(|(p, _)| p).collect();
            assert_eq!(got, want, "{}", arch.name);
            let weights = arch
                .param_specs()
                .iter()
                .filter(|(_, s)| s.kind == ParamKind::Weight)
                .count();
            assert_eq!(weights, arch.prunable_paths().len());
        }
    }
}
