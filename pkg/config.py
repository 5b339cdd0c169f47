import os
from dotenv import load_dotenv

load_dotenv('.env')

# Enable debug logging.
DEBUG = os.environ.get('DEBUG', '').lower() in ('1', 'true', 'yes')

# Worker threads for the shortest-path stage; values are checked by app.setting.
GLOMAP_THREADS = os.environ.get('GLOMAP_THREADS', '1')

# Log file, written inside the run output folder.
LOG_FILE = os.environ.get('LOG_FILE', 'glomap.log')

# Default checkpoint period in epochs, 0 disables checkpoints.
CHECKPOINT_EVERY = os.environ.get('CHECKPOINT_EVERY', '25')
