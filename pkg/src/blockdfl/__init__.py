"""Blockchain-coordinated, fully decentralized federated learning simulator."""

from .sim import (ConfigError, DataConfig, MetricsLog, RoundMetrics, SimConfig, desk_config,
                  export, load_config, replay_chain, run_fedavg_baseline, run_simulation,
                  summarize)

__all__ = ["ConfigError", "DataConfig", "MetricsLog", "RoundMetrics", "SimConfig", "desk_config",
           "export", "load_config", "replay_chain", "run_fedavg_baseline", "run_simulation",
           "summarize"]
__version__ = "0.1.0"
