import json
import os
from datetime import datetime
from core.logger import Logger

class RunHistory:
    def __init__(self):
        self.logger = Logger()
        # 运行记录保存在工作目录的config下
        from core.config import ConfigManager
        config_manager = ConfigManager()
        self.history_file = config_manager.get_history_file()
        self._ensure_file()

    def _ensure_file(self):
        if not os.path.exists(self.history_file):
            self._save_data({"runs": []})

    def _load_data(self):
        try:
            with open(self.history_file, 'r', encoding='utf-8') as f:
                return json.load(f)
        except (OSError, ValueError) as e:
            self.logger.error(f"Failed to load run history: {e}")
            return {"runs": []}

    def _save_data(self, data):
        try:
            with open(self.history_file, 'w', encoding='utf-8') as f:
                json.dump(data, f, indent=4, ensure_ascii=False)
        except OSError as e:
            self.logger.error(f"Failed to save run history: {e}")

    def add_record(self, experiment, seed, report_path, passed):
        """Append a finished run"""
        data = self._load_data()
        records = data.get("runs", [])

        # Re-running into the same report file replaces the old record
        records = [r for r in records
                   if os.path.normpath(r['report']) != os.path.normpath(report_path)]
        records.append({
            "experiment": experiment,
            "seed": seed,
            "report": report_path,
            "passed": bool(passed),
            "run_time": datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
        })

        data["runs"] = records
        self._save_data(data)
        self.logger.info(f"History updated: {experiment} (seed {seed}) -> {report_path}")

    def get_records(self):
        return self._load_data().get("runs", [])
