# Detection fusion, tracking, association and metrics