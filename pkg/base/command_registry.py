"""
Command Registry - Maps CLI command names to their handlers
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from base import commands
from base.errors import ConfigError
from base.run_config import RunConfig

logger = logging.getLogger(__name__)


@dataclass
class Command:
    """Command definition"""
    name: str
    description: str
    func: Callable[[RunConfig], Dict[str, Path]]
    # RunConfig fields that must be set
    required: Tuple[str, ...] = ()

    def execute(self, cfg: RunConfig) -> Dict[str, Path]:
        """Execute the command with a validated run configuration"""
        missing = [key for key in self.required if not getattr(cfg, key)]
        if missing:
            raise ConfigError(f"{self.name} needs {', '.join(f'{k}=<path>' for k in missing)}")

        logger.info(f"Executing command: {self.name} (seed {cfg.seed}, out {cfg.out})")
        try:
            outputs = self.func(cfg)
            logger.info(f"Command {self.name} finished, {len(outputs)} outputs")
            return outputs
        except Exception as e:
            logger.error(f"Command {self.name} failed: {str(e)}")
            raise

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "description": self.description, "required": list(self.required)}


class CommandManager:
    """Registry of CLI commands"""

    def __init__(self):
        self.commands: Dict[str, Command] = {}

    def register(self, command: Command):
        self.commands[command.name] = command

    def get(self, name: str) -> Optional[Command]:
        return self.commands.get(name)

    def names(self) -> List[str]:
        return list(self.commands)

    def list_commands(self) -> List[Dict[str, Any]]:
        return [c.to_dict() for c in self.commands.values()]

    def execute(self, name: str, cfg: RunConfig) -> Dict[str, Path]:
        command = self.get(name)
        if not command:
            raise ConfigError(f"Unknown command {name!r}. Available: {', '.join(self.commands)}")
        return command.execute(cfg)


def default_commands() -> CommandManager:
    """Registry with every command of the toolkit"""
    manager = CommandManager()
    for command in (
        Command("synth", "Generate the versioned synthetic corpus", commands.run_synth),
        Command("ingest", "Resample and window CSV recordings into a store", commands.run_ingest),
        Command("pretrain", "Multi-task self-supervised pre-training", commands.cmd_pretrain, ("store",)),
        Command("finetune", "Fine-tune a pre-trained trunk under subject-wise CV", commands.cmd_finetune, ("store", "checkpoint")),
        Command("scratch", "Train the same network from scratch under subject-wise CV", commands.cmd_scratch, ("store",)),
        Command("transfer", "Supervised pre-training on source_store, then fine-tuning", commands.cmd_transfer, ("store", "source_store")),
        Command("rf", "Random-forest baseline on hand-crafted features", commands.cmd_rf, ("store",)),
        Command("eval", "Score a trained classifier checkpoint", commands.cmd_eval, ("store", "checkpoint")),
        Command("explain", "Relevance map, scalogram and panel for one window", commands.cmd_explain, ("store", "checkpoint")),
        Command("mask", "Masking-faithfulness curves", commands.cmd_mask, ("store", "checkpoint")),
        Command("ablate", "Labelled or unlabelled data-volume ablation", commands.cmd_ablate, ("store",)),
        Command("export-embeddings", "Trunk features of every window as CSV", commands.cmd_export_embeddings, ("store", "checkpoint")),
    ):
        manager.register(command)
    return manager
