#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
日志管理器
负责统一管理系统日志配置和初始化

功能：
1. 从 config/log_config.ini 加载 colorlog 控制台输出与文件输出
2. 日志文件路径由配置目录决定，配置变化时重新加载
3. 缺少 colorlog 或配置文件时退回到基本配置
4. 控制台级别可由 --log-level 或环境变量 BALANCEKIT_LOG_LEVEL 设置
"""

import logging
import logging.config
import os
from pathlib import Path
from typing import Dict, Optional, Tuple

from core.errors import InvalidInput

LOG_FILE_NAME = "balancekit.log"
LEVEL_ENV = "BALANCEKIT_LOG_LEVEL"
# 混合模型与基准测试在线程池中运行，文件日志带线程名
FILE_FORMAT = '%(asctime)s - %(threadName)s - %(name)s - %(levelname)s - %(message)s'
CONSOLE_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


class LoggerManager:
    """日志管理器"""

    _initialized = False
    _loggers: Dict[str, logging.Logger] = {}
    _log_file: Optional[Path] = None
    _source: Optional[Tuple[str, str]] = None

    @classmethod
    def initialize(cls, config_file: Optional[str] = None, log_dir: Optional[str] = None):
        """
        初始化日志系统；同一组配置只加载一次，配置文件或日志目录变化时重新加载

        Args:
            config_file: 日志配置文件路径，默认 config/log_config.ini
            log_dir: 日志文件输出目录，默认项目根目录下的 logs
        """
        project_root = Path(__file__).parent.parent
        config_path = Path(config_file) if config_file else project_root / "config" / "log_config.ini"
        log_path = Path(log_dir) if log_dir else project_root / "logs"
        source = (str(config_path.resolve()), str(log_path.resolve()))
        if cls._initialized and cls._source == source:
            return
        if cls._initialized:
            cls._release_handlers()

        try:
            log_path.mkdir(parents=True, exist_ok=True)
            cls._log_file = log_path / LOG_FILE_NAME

            try:
                import colorlog  # noqa: F401
                has_colorlog = True
            except ImportError:
                has_colorlog = False

            if has_colorlog and config_path.exists():
                logging.config.fileConfig(
                    str(config_path),
                    defaults={'logfile': cls._log_file.as_posix()},
                    disable_existing_loggers=False,
                    encoding='utf-8'
                )
            else:
                cls._setup_basic_logging(cls._log_file, has_colorlog)

            cls._initialized = True
            cls._source = source

            env_level = os.environ.get(LEVEL_ENV)
            if env_level:
                cls.set_level(env_level)

            logger = cls.get_logger("LoggerManager")
            logger.debug(f"日志系统初始化完成，日志文件: {cls._log_file}")
            if not has_colorlog:
                logger.warning("colorlog包未安装，使用基本日志配置")
            elif not config_path.exists():
                logger.warning(f"日志配置文件不存在: {config_path}，使用基本日志配置")

        except (OSError, ValueError, KeyError, InvalidInput) as e:
            logging.basicConfig(level=logging.WARNING, format=CONSOLE_FORMAT)
            logging.getLogger("LoggerManager").error(f"日志系统初始化失败，使用基本配置: {e}")
            cls._initialized = True
            cls._source = source

    @classmethod
    def _setup_basic_logging(cls, log_file: Path, has_colorlog: bool):
        """不依赖 ini 文件的配置：DEBUG 写文件，WARNING 以上输出到控制台"""
        root_logger = logging.getLogger()
        root_logger.setLevel(logging.DEBUG)

        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT))

        if has_colorlog:
            import colorlog
            console_handler = colorlog.StreamHandler()
            console_handler.setFormatter(colorlog.ColoredFormatter(
                '%(log_color)s' + CONSOLE_FORMAT + '%(reset)s'))
        else:
            console_handler = logging.StreamHandler()
            console_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT))
        console_handler.setLevel(logging.WARNING)

        root_logger.addHandler(file_handler)
        root_logger.addHandler(console_handler)

    @classmethod
    def _release_handlers(cls):
        root_logger = logging.getLogger()
        for handler in list(root_logger.handlers):
            root_logger.removeHandler(handler)
            handler.close()

    @classmethod
    def get_logger(cls, name: str) -> logging.Logger:
        """获取指定名称的logger，必要时按默认配置初始化"""
        if not cls._initialized:
            cls.initialize()

        if name not in cls._loggers:
            cls._loggers[name] = logging.getLogger(name)

        return cls._loggers[name]

    @classmethod
    def set_level(cls, level: str):
        """
        设置控制台日志级别，文件日志保持 DEBUG

        Raises:
            InvalidInput: 无效的日志级别
        """
        numeric_level = logging.getLevelName(level.upper())
        if not isinstance(numeric_level, int):
            raise InvalidInput(f'无效的日志级别: {level}', {"level": level})

        for handler in logging.getLogger().handlers:
            if not isinstance(handler, logging.FileHandler):
                handler.setLevel(numeric_level)

    @classmethod
    def get_log_file(cls) -> Optional[Path]:
        return cls._log_file

    @classmethod
    def is_initialized(cls) -> bool:
        return cls._initialized

    @classmethod
    def shutdown(cls):
        """关闭日志系统"""
        cls._release_handlers()
        logging.shutdown()
        cls._initialized = False
        cls._source = None
        cls._loggers.clear()


def get_logger(name: str) -> logging.Logger:
    return LoggerManager.get_logger(name)


def init_logging(config_file: Optional[str] = None, log_dir: Optional[str] = None):
    LoggerManager.initialize(config_file, log_dir)
