import logging
import os
import sys
from datetime import datetime

from dotenv import load_dotenv

# Load .env file
load_dotenv()

if __name__ == "__main__":
    # Create logs directory if not exists
    logs_dir = os.path.join(os.path.dirname(os.path.abspath(__file__)), "logs")
    os.makedirs(logs_dir, exist_ok=True)

    # Generate log filename with datetime
    log_datetime = datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
    log_path = os.path.join(logs_dir, f"vtd_log_{log_datetime}.log")

    import main

    # Keep console logging from main and add a file copy of every record
    file_handler = logging.FileHandler(log_path, encoding="utf-8")
    file_handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
    logging.getLogger().addHandler(file_handler)

    logging.getLogger("run").info(f"Log file: {log_path}")
    sys.exit(main.main(sys.argv[1:]))
