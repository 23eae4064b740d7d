"""
Logging utility module for consistent logging across the codec and estimator pipeline.
This module provides centralized logging configuration, log formatting, and helpers
for logging training steps, invariant checks and progress with consistent context.

The utility is designed to be:
- Configurable: Adjustable log levels, formats, and output destinations
- Context-aware: Includes timestamps, module names, and execution context
- Observable: Supports both console and file logging (the file lives in the run directory)
"""

import logging
import sys
import time
import traceback
from functools import wraps
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import humanize

DEFAULT_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(config: Optional[Dict[str, Any]] = None) -> None:
    """
    Set up logging configuration for the application.

    Args:
        config: Configuration dictionary with logging settings
            (``log_level``, ``log_format``, ``log_file``)
    """
    config = config or {}

    log_level_str = str(config.get('log_level', 'INFO')).upper()
    log_level = getattr(logging, log_level_str, logging.INFO)
    log_format = config.get('log_format', DEFAULT_FORMAT)

    log_file = config.get('log_file')
    if log_file:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)

    formatter = logging.Formatter(log_format)

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)
    root_logger.handlers = []

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    if log_file:
        try:
            file_handler = logging.FileHandler(log_file)
            file_handler.setFormatter(formatter)
            root_logger.addHandler(file_handler)
        except OSError as e:
            logging.warning(f"Failed to set up file logging: {e}")

    # Third-party loggers that are chatty at INFO
    for noisy in ('matplotlib', 'PIL', 'numba'):
        logging.getLogger(noisy).setLevel(max(log_level, logging.WARNING))

    logging.getLogger('src').setLevel(log_level)
    logging.debug(f"Logging setup complete (level={log_level_str}, file={log_file})")


def get_logger(name: str) -> logging.Logger:
    """
    Get a configured logger for a specific module or component.

    Args:
        name: Name of the logger (typically __name__)

    Returns:
        Configured logger instance
    """
    return logging.getLogger(name)


def log_function_call(func):
    """
    Decorator to log function calls with timing and arguments.

    Usage:
        @log_function_call
        def hpr_decompose(clip, cfg):
            ...
    """
    logger = get_logger(func.__module__)

    @wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.time()
        func_name = func.__name__
        try:
            logger.debug(f"Calling {func_name} with args: {_sanitize_log_args(args, kwargs)}")
            result = func(*args, **kwargs)
            logger.debug(f"Function {func_name} completed in {time.time() - start_time:.3f}s")
            return result
        except Exception as e:
            logger.error(f"Function {func_name} failed after {time.time() - start_time:.3f}s: {e}")
            logger.debug(traceback.format_exc())
            raise

    return wrapper


def _sanitize_log_args(args, kwargs) -> Dict[str, Any]:
    """
    Reduce arguments to loggable summaries (arrays and models become type names).

    Args:
        args: Function positional arguments
        kwargs: Function keyword arguments

    Returns:
        Sanitized dictionary of arguments
    """
    def summarize(value: Any) -> Any:
        if isinstance(value, (str, int, float, bool, type(None))):
            return value
        shape = getattr(value, 'shape', None)
        if shape is not None:
            return f"<{type(value).__name__} shape={tuple(shape)}>"
        return f"<{type(value).__name__}>"

    sensitive_keywords = ['password', 'token_file_key', 'secret', 'credential']
    sanitized = {'args': [summarize(a) for a in args], 'kwargs': {}}
    for key, value in kwargs.items():
        if any(s in key.lower() for s in sensitive_keywords):
            sanitized['kwargs'][key] = "****"
        else:
            sanitized['kwargs'][key] = summarize(value)
    return sanitized


def log_training_step(phase: str, step: int, losses: Mapping[str, float], lr: float,
                      logger_name: str = 'src.training') -> None:
    """
    Log one optimizer step as a single structured line.

    Args:
        phase: Training phase name (lf, hf, finetune, lm)
        step: Global step index
        losses: Named scalar loss terms
        lr: Learning rate applied at this step
    """
    logger = get_logger(logger_name)
    terms = ' '.join(f"{k}={v:.5f}" for k, v in losses.items())
    logger.info(f"[{phase}] step={step} lr={lr:.3e} {terms}")


def log_validation_result(entity_type: str, entity_id: Any, is_valid: bool, issues: list = None):
    """
    Log validation results for invariant checks.

    Args:
        entity_type: Type of entity being validated (clip, manifest, checkpoint, ...)
        entity_id: Entity identifier
        is_valid: Validation result
        issues: List of validation issues if any
    """
    logger = get_logger('src.validation')

    if is_valid:
        logger.debug(f"Validation passed for {entity_type} {entity_id}")
    else:
        logger.warning(f"Validation failed for {entity_type} {entity_id}")
        for issue in issues or []:
            logger.warning(f"  - {issue}")


def log_progress(iteration: int, total: int, description: str = "Processing"):
    """
    Log progress for long-running operations (every 10% or at the end).

    Args:
        iteration: Current iteration number
        total: Total number of iterations
        description: Description of the operation
    """
    if total <= 0:
        return

    progress_percent = (iteration / total) * 100
    if iteration % max(1, total // 10) == 0 or iteration == total:
        get_logger('src.progress').info(f"{description}: {iteration}/{total} ({progress_percent:.1f}%)")


def log_artifact(kind: str, path: Path) -> None:
    """Log a written artifact with its human-readable size."""
    path = Path(path)
    size = humanize.naturalsize(path.stat().st_size) if path.exists() else "missing"
    get_logger('src.artifacts').info(f"Wrote {kind}: {path} ({size})")

