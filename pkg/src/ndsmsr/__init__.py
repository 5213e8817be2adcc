from .main import cmd_synth, cmd_train, cmd_infer, cmd_evaluate, cmd_ablate_alignment
from .utils.weights import load_model
