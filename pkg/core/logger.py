import logging
import os
import sys
from datetime import datetime

class Logger:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(Logger, cls).__new__(cls)
            cls._instance._initialize_logger()
        return cls._instance

    def _initialize_logger(self):
        self.logger = logging.getLogger("SphereControlLab")
        level_name = os.environ.get("SCL_LOG_LEVEL", "INFO").upper()
        level = getattr(logging, level_name, logging.INFO)
        self.logger.setLevel(level)
        self.logger.propagate = False

        # 日志写入工作目录下的logs目录
        try:
            from core.config import ConfigManager
            logs_dir = ConfigManager().get_logs_dir()
        except Exception:
            # ConfigManager初始化失败时退回当前目录
            logs_dir = os.path.join(os.getcwd(), "logs")

        if not os.path.exists(logs_dir):
            os.makedirs(logs_dir)

        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        self.log_file = os.path.join(logs_dir, f"run_{timestamp}.log")

        # File handler
        file_handler = logging.FileHandler(self.log_file, encoding='utf-8')
        file_handler.setLevel(level)
        file_formatter = logging.Formatter('%(asctime)s - %(levelname)s - %(message)s')
        file_handler.setFormatter(file_formatter)

        # Console handler: stderr, stdout is reserved for `scl report`
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(level)
        console_formatter = logging.Formatter('%(levelname)s: %(message)s')
        console_handler.setFormatter(console_formatter)

        self.logger.addHandler(file_handler)
        self.logger.addHandler(console_handler)

        self._warned = set()

    def debug(self, message):
        self.logger.debug(message)

    def info(self, message):
        self.logger.info(message)

    def error(self, message):
        self.logger.error(message)

    def warning(self, message):
        self.logger.warning(message)

    def warning_once(self, key, message):
        """Emit a warning the first time `key` is seen in this process."""
        if key in self._warned:
            return
        self._warned.add(key)
        self.logger.warning(message)
